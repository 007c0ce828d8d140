use dmdhdr::controller::*;
use dmdhdr::optics::{DmdModel, SensorModel};
use dmdhdr::scene::RadianceField;
use proptest::prelude::*;

fn run(scene: &RadianceField, cfg: &ControllerConfig) -> AdaptationResult {
    adapt_scene(
        scene,
        &SensorModel::eight_bit(),
        &DmdModel::default(),
        cfg,
        0,
    )
    .unwrap()
}

/// Smallest `k` whose rounded, clipped reading no longer exceeds the
/// threshold; `None` when even the floor saturates.
fn rounded_oracle(e: f64, s_max: f64, threshold: f64, floor: u8) -> Option<u8> {
    (0..=floor).find(|&k| (e * 2f64.powi(-(k as i32))).round().min(s_max) <= threshold)
}

/// 16x16 field: `vals` in row-major order, then a dim background.
fn field(vals: &[f64]) -> RadianceField {
    RadianceField::from_fn(16, 16, |x, y| vals.get(y * 16 + x).copied().unwrap_or(10.0)).unwrap()
}

#[test]
fn five_times_threshold_needs_three_halvings() {
    let s_th = 0.95 * 255.0;
    let scene = RadianceField::from_fn(
        16,
        16,
        |x, y| if (x, y) == (7, 7) { 5.0 * s_th } else { 20.0 },
    )
    .unwrap();
    let r = run(&scene, &ControllerConfig::default());
    assert_eq!(r.mask.exponent(7, 7), 3);
    assert_eq!(
        r.mask
            .exponents()
            .as_slice()
            .iter()
            .filter(|&&k| k > 0)
            .count(),
        1
    );
    assert_eq!(r.iterations, 4);
    assert_eq!(r.residual_count(), 0);
    assert!(!r.exhausted);
}

#[test]
fn floor_pixel_stays_in_residual() {
    let scene =
        RadianceField::from_fn(16, 16, |x, y| if (x, y) == (2, 9) { 1e6 } else { 20.0 }).unwrap();
    let r = run(&scene, &ControllerConfig::default());
    assert_eq!(r.mask.exponent(2, 9), 11);
    assert!(*r.residual_saturated.get(2, 9));
    assert_eq!(r.residual_count(), 1);
    assert_eq!(r.iterations, 12);
    assert!(!r.exhausted);
}

#[test]
fn unsaturated_scene_takes_one_capture() {
    let scene = RadianceField::uniform(32, 32, 100.0).unwrap();
    let r = run(&scene, &ControllerConfig::default());
    assert_eq!(r.iterations, 1);
    assert!(r.mask.is_all_ones());
}

#[test]
fn threshold_is_strict_on_raw_counts() {
    // 242 is below 242.25; 243 is above.
    let scene = field(&[242.0, 243.0]);
    let r = run(&scene, &ControllerConfig::default());
    assert_eq!(r.mask.exponent(0, 0), 0);
    assert_eq!(r.mask.exponent(1, 0), 1);
}

#[test]
fn matches_rounded_oracle_on_random_scenes() {
    let sensor = SensorModel::eight_bit();
    let dmd = DmdModel::default();
    let cfg = ControllerConfig::default();
    let s_th = cfg.threshold(&sensor);
    for seed in 0..40u64 {
        let scene = RadianceField::from_fn(24, 24, |x, y| {
            let z = ((x + 24 * y) as u64 ^ (seed << 20)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let u = (z >> 11) as f64 / (1u64 << 53) as f64;
            // Log-uniform over [1, 1e6].
            10f64.powf(6.0 * u)
        })
        .unwrap();
        let r = adapt_scene(&scene, &sensor, &dmd, &cfg, seed).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let e = scene.get(x, y);
                match rounded_oracle(e, 255.0, s_th, 11) {
                    Some(k) => {
                        assert_eq!(r.mask.exponent(x, y), k, "E = {e}");
                        assert!(!*r.residual_saturated.get(x, y));
                    }
                    None => {
                        assert_eq!(r.mask.exponent(x, y), 11);
                        assert!(*r.residual_saturated.get(x, y));
                    }
                }
            }
        }
    }
}

#[test]
fn literal_break_stops_when_floor_reached() {
    // One pixel needs the floor, another needs only three halvings.
    let scene = RadianceField::from_fn(16, 16, |x, y| match (x, y) {
        (0, 0) => 1e6,
        (5, 5) => 1200.0,
        _ => 10.0,
    })
    .unwrap();
    let normal = run(&scene, &ControllerConfig::default());
    let literal = run(
        &scene,
        &ControllerConfig {
            literal_break: true,
            ..ControllerConfig::default()
        },
    );
    assert_eq!(literal.iterations, normal.iterations);
    assert_eq!(literal.mask, normal.mask);

    // With a suppressed floor region the literal test fires on the first scan.
    let suppress = vec![Suppression {
        x0: 10,
        y0: 10,
        x1: 12,
        y1: 12,
        exponent: 11,
    }];
    let lit = run(
        &scene,
        &ControllerConfig {
            literal_break: true,
            suppression: suppress.clone(),
            ..ControllerConfig::default()
        },
    );
    assert_eq!(lit.iterations, 1);
    assert_eq!(lit.mask.exponent(5, 5), 0);
    let full = run(
        &scene,
        &ControllerConfig {
            suppression: suppress,
            ..ControllerConfig::default()
        },
    );
    assert_eq!(full.mask.exponent(5, 5), 3);
    assert_eq!(full.mask.exponent(11, 11), 11);
    assert_eq!(full.mask.exponent(12, 12), 0);
}

#[test]
fn suppression_must_fit() {
    let scene = RadianceField::uniform(16, 16, 10.0).unwrap();
    let bad = ControllerConfig {
        suppression: vec![Suppression {
            x0: 4,
            y0: 4,
            x1: 20,
            y1: 6,
            exponent: 2,
        }],
        ..ControllerConfig::default()
    };
    let sensor = SensorModel::eight_bit();
    assert!(adapt_scene(&scene, &sensor, &DmdModel::default(), &bad, 0).is_err());
    let bad_th = ControllerConfig {
        threshold_factor: 1.0,
        ..ControllerConfig::default()
    };
    assert!(adapt_scene(&scene, &sensor, &DmdModel::default(), &bad_th, 0).is_err());
}

#[test]
fn trace_counts_down_to_zero() {
    let scene = RadianceField::from_fn(16, 16, |x, _| 2f64.powi(x as i32 % 10) * 200.0).unwrap();
    let r = run(
        &scene,
        &ControllerConfig {
            record_trace: true,
            ..ControllerConfig::default()
        },
    );
    let t = r.trace.unwrap();
    assert_eq!(t.len(), r.iterations);
    assert_eq!(t[0].max_mu, 1.0);
    assert_eq!(t[0].min_mu, 1.0);
    assert_eq!(t.last().unwrap().saturated_count, 0);
    for w in t.windows(2) {
        assert!(w[1].saturated_count <= w[0].saturated_count);
        assert!(w[1].min_mu <= w[0].min_mu);
        assert_eq!(w[1].iteration, w[0].iteration + 1);
    }
}

#[test]
fn iteration_cap_marks_exhausted() {
    let scene = RadianceField::uniform(16, 16, 1e5).unwrap();
    let r = run(
        &scene,
        &ControllerConfig {
            max_iterations: Some(3),
            ..ControllerConfig::default()
        },
    );
    assert_eq!(r.iterations, 3);
    assert!(r.exhausted);
    assert_eq!(r.mask.exponent(0, 0), 2);
}

#[test]
fn scan_and_update_without_update_only_marks() {
    let counts = [10u16, 250, 255, 255];
    let mut exps = [0u8, 0, 3, 11];
    let mut z = [false; 4];
    let s = scan_and_update(&counts, &mut exps, &mut z, 242.25, 11, false);
    assert_eq!(z, [false, true, true, true]);
    assert_eq!(exps, [0, 0, 3, 11]);
    assert_eq!((s.saturated, s.at_floor, s.attenuated), (3, 1, 0));
    let s = scan_and_update(&counts, &mut exps, &mut z, 242.25, 11, true);
    assert_eq!(exps, [0, 1, 4, 11]);
    assert_eq!(s.attenuated, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loop_invariants(
        vals in proptest::collection::vec(0.0f64..3e5, 256),
        noise in prop_oneof![Just(0.0f64), 0.5f64..5.0],
        seed in 0u64..1000,
    ) {
        let scene = field(&vals);
        let mut sensor = SensorModel::eight_bit();
        sensor.read_noise_sigma = noise;
        let dmd = DmdModel::default();
        let cfg = ControllerConfig { record_trace: true, ..ControllerConfig::default() };
        let r = adapt_scene(&scene, &sensor, &dmd, &cfg, seed).unwrap();
        let s_th = cfg.threshold(&sensor);

        // Termination.
        if noise == 0.0 {
            prop_assert!(r.iterations <= dmd.max_exponent as usize + 1);
        }
        prop_assert!(r.iterations <= cfg.iteration_cap(&dmd));
        prop_assert!(!r.exhausted || noise > 0.0);

        for y in 0..16 {
            for x in 0..16 {
                let k = r.mask.exponent(x, y);
                // Residual pixels sit at the floor unless the cap was hit.
                if *r.residual_saturated.get(x, y) && !r.exhausted {
                    prop_assert_eq!(k, dmd.max_exponent);
                }
                if noise == 0.0 {
                    // Locality: never-saturating pixels stay open.
                    if scene.get(x, y).round() <= s_th {
                        prop_assert_eq!(k, 0);
                    }
                    // No over-attenuation.
                    if k > 0 {
                        let prev = scene.get(x, y) * 2f64.powi(1 - k as i32);
                        prop_assert!(prev.round() > s_th);
                    }
                }
            }
        }
        let t = r.trace.unwrap();
        for w in t.windows(2) {
            prop_assert!(w[1].min_mu <= w[0].min_mu);
        }
    }

    #[test]
    fn brighter_scene_never_gets_less_attenuation(
        vals in proptest::collection::vec(1.0f64..1e5, 256),
        factor in 1.0f64..50.0,
    ) {
        let a = field(&vals);
        let b = a.scaled(factor).unwrap();
        let ra = run(&a, &ControllerConfig::default());
        let rb = run(&b, &ControllerConfig::default());
        for (ka, kb) in ra.mask.exponents().as_slice().iter().zip(rb.mask.exponents().as_slice()) {
            prop_assert!(kb >= ka);
        }
    }
}
