//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! binary exits non-zero if any fails.

use std::time::{Duration, Instant};

use dmdhdr::controller::{adapt_mask, adapt_scene, scan_and_update, ControllerConfig};
use dmdhdr::dic::{dic_match, effective_area, strain, DeformationField, DicConfig};
use dmdhdr::harness::{run_quality_study, run_strain_study, Method, Mode, Scenario};
use dmdhdr::hdr::{measured_dr, reconstruct, theoretical_dr};
use dmdhdr::io;
use dmdhdr::optics::{capture, CapturedFrame, DmdModel, ModulationMask, SensorModel};
use dmdhdr::scene::{gen_speckle, warp, DeformationSpec, GlareKind, RadianceField, SpeckleParams};
use dmdhdr::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn speckle(n: usize, seed: u64) -> RadianceField {
    gen_speckle(&SpeckleParams {
        seed,
        width: n,
        height: n,
        count: n * n / 60,
        radius: 2.0,
        base: 15.0,
        peak: 100.0,
    })
    .unwrap()
}

fn open_capture(field: &RadianceField, sensor: &SensorModel) -> CapturedFrame {
    let ones = ModulationMask::ones(field.width(), field.height(), 11).unwrap();
    capture(field, &ones, sensor, &DmdModel::default(), 0).unwrap()
}

fn dynamic_range_arithmetic() -> Outcome {
    let unit = DmdModel {
        t_ratio: 1.0,
        ..DmdModel::default()
    };
    let eight = theoretical_dr(&SensorModel::eight_bit(), &unit, false);
    let scmos = theoretical_dr(&SensorModel::scmos_16bit(), &DmdModel::default(), false);
    outcome(
        (eight - 48.13).abs() <= 0.005 && scmos == 127.0,
        format!("8-bit {eight:.4} dB, 87 dB + t_ratio 100 = {scmos} dB"),
    )
}

/// Smallest exponent whose expected response no longer exceeds the
/// threshold, clamped to the floor.
fn continuous_oracle(e: f64, s_th: f64, floor: u8) -> u8 {
    (0..=floor)
        .find(|&k| e * 2f64.powi(-(k as i32)) <= s_th)
        .unwrap_or(floor)
}

/// Same search on the rounded, clipped reading the noiseless sensor returns.
fn rounded_oracle(e: f64, s_max: f64, s_th: f64, floor: u8) -> u8 {
    (0..=floor)
        .find(|&k| (e * 2f64.powi(-(k as i32))).round().min(s_max) <= s_th)
        .unwrap_or(floor)
}

fn controller_oracle() -> Outcome {
    let sensor = SensorModel::eight_bit();
    let dmd = DmdModel::default();
    let cfg = ControllerConfig::default();
    let s_th = cfg.threshold(&sensor);
    let s_max = sensor.s_max() as f64;
    let floor = dmd.max_exponent;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pixels, mut rounded_mismatch, mut cont_mismatch, mut outside_band) = (0, 0, 0, 0);
    for scene_idx in 0..1000 {
        // Log-uniform radiance from well below to far above the floor.
        let top = 10f64.powf(rng.random::<f64>() * 3.0 + 3.0);
        let vals: Vec<f64> = (0..64 * 64)
            .map(|_| top.powf(rng.random::<f64>()))
            .collect();
        let scene = RadianceField::from_fn(64, 64, |x, y| vals[y * 64 + x]).unwrap();
        let r = adapt_scene(&scene, &sensor, &dmd, &cfg, scene_idx).unwrap();
        for (i, &e) in vals.iter().enumerate() {
            let k = r.mask.exponents().as_slice()[i];
            pixels += 1;
            if k != rounded_oracle(e, s_max, s_th, floor) {
                rounded_mismatch += 1;
            }
            let kc = continuous_oracle(e, s_th, floor);
            if k != kc {
                cont_mismatch += 1;
                // The only admissible disagreement: the reading at k lands in
                // (S_th, S_th + 0.5) and rounds down onto the threshold.
                let at_k = e * 2f64.powi(-(k as i32));
                if !(at_k > s_th && at_k < s_th.floor() + 0.5) {
                    outside_band += 1;
                }
            }
        }
    }
    outcome(
        rounded_mismatch == 0 && outside_band == 0,
        format!(
            "1000 scenes, {pixels} pixels: {rounded_mismatch} mismatches vs quantized oracle; \
             {cont_mismatch} vs unquantized oracle, {outside_band} outside the rounding band"
        ),
    )
}

fn wedge_reconstruction() -> Outcome {
    let sensor = SensorModel::scmos_16bit();
    let dmd = DmdModel::default();
    let ratio = 10f64.powf(127.0 / 20.0);
    // Sixteen log-spaced patches. The darkest sits on an integer count:
    // with floor 2^-11 the brightest patch caps it near 60 counts, where
    // half-count rounding of an arbitrary level would already cost 0.8 %.
    let e_min = 56.0;
    let patches = 16;
    let n = 512;
    let level = |p: usize| e_min * ratio.powf(p as f64 / (patches - 1) as f64);
    let scene = RadianceField::from_fn(n, n, |x, _| level(x * patches / n)).unwrap();
    let start = Instant::now();
    let a = adapt_scene(&scene, &sensor, &dmd, &ControllerConfig::default(), 0).unwrap();
    let recon = reconstruct(&a.final_frame, &a.mask, &sensor).unwrap();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    let mut bound_violations = 0;
    for y in 0..n {
        for x in 0..n {
            let truth = scene.get(x, y);
            let est = *recon.radiance().get(x, y);
            let rel = (est - truth).abs() / truth;
            worst = worst.max(rel);
            let reading = truth * 2f64.powi(-(a.mask.exponent(x, y) as i32));
            if rel > 0.5 / reading + 1e-12 {
                bound_violations += 1;
            }
        }
    }
    let dr = measured_dr(&recon).unwrap();
    outcome(
        recon.valid_fraction() == 1.0
            && worst <= 0.005
            && bound_violations == 0
            && (dr - 127.0).abs() <= 0.5,
        format!(
            "valid {:.3}, worst rel err {:.3e}, measured {dr:.3} dB, {} captures, {:.0} ms",
            recon.valid_fraction(),
            worst,
            a.iterations,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn dic_self_consistency() -> Outcome {
    let n = 512;
    let field = speckle(n, 11);
    let sensor = SensorModel::eight_bit();
    let reference = open_capture(&field, &sensor);
    let cfg = DicConfig::default();
    let start = Instant::now();
    let shifted = |u, v| {
        open_capture(
            &warp(&field, &DeformationSpec::Translation { u, v }).unwrap(),
            &sensor,
        )
    };
    let errors = |m: &DeformationField, u: f64, v: f64| -> (f64, f64) {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for (du, dv) in m.u.as_slice().iter().zip(m.v.as_slice()) {
            let e = (du - u).hypot(dv - v);
            sum += e;
            max = max.max(e);
        }
        (sum / m.u.len() as f64, max)
    };

    let id = dic_match(&reference, &reference, &cfg).unwrap();
    let id_max =
        id.u.as_slice()
            .iter()
            .chain(id.v.as_slice())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
    let int = dic_match(&reference, &shifted(3.0, 2.0), &cfg).unwrap();
    let (_, int_max) = errors(&int, 3.0, 2.0);
    let sub = dic_match(&reference, &shifted(0.5, 0.25), &cfg).unwrap();
    let (sub_mean, _) = errors(&sub, 0.5, 0.25);
    let elapsed = start.elapsed();
    let all_converged = effective_area(&id) == 100.0
        && effective_area(&int) == 100.0
        && effective_area(&sub) == 100.0;
    outcome(
        id_max < 1e-6
            && int_max < 0.01
            && sub_mean < 0.02
            && all_converged
            && elapsed < Duration::from_secs(30),
        format!(
            "{} points: identity max {id_max:.2e} px, (3,2) max err {int_max:.2e} px, \
             (0.5,0.25) mean err {sub_mean:.4} px, {:.1} s",
            id.u.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn analytic_field(f: impl Fn(f64, f64) -> (f64, f64)) -> DeformationField {
    let xs: Vec<usize> = (20..=492).step_by(8).collect();
    let ys = xs.clone();
    let (nx, ny) = (xs.len(), ys.len());
    let uv: Vec<(f64, f64)> = (0..nx * ny)
        .map(|i| f(xs[i % nx] as f64, ys[i / nx] as f64))
        .collect();
    DeformationField {
        u: Raster::from_vec(nx, ny, uv.iter().map(|p| p.0).collect()).unwrap(),
        v: Raster::from_vec(nx, ny, uv.iter().map(|p| p.1).collect()).unwrap(),
        zncc: Raster::filled(nx, ny, 1.0).unwrap(),
        converged: Raster::filled(nx, ny, true).unwrap(),
        iterations: Raster::filled(nx, ny, 0).unwrap(),
        xs,
        ys,
    }
}

fn strain_oracle() -> Outcome {
    let cfg = DicConfig::default();
    let worst = |f: &DeformationField, e1: f64, e2: f64| -> f64 {
        let s = strain(f, &cfg).unwrap();
        s.e1.as_slice()
            .iter()
            .zip(s.e2.as_slice())
            .map(|(a, b)| (a - e1).abs().max((b - e2).abs()))
            .fold(0.0, f64::max)
    };
    let stretch = worst(&analytic_field(|x, _| (0.01 * x, 0.0)), 0.01, 0.0);
    let shear = worst(
        &analytic_field(|x, y| (0.005 * y, 0.005 * x)),
        0.005,
        -0.005,
    );
    outcome(
        stretch <= 1e-6 && shear <= 1e-6,
        format!("max |e - oracle|: stretch {stretch:.1e}, shear {shear:.1e}"),
    )
}

fn study_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.scene.speckle.width = 512;
    s.scene.speckle.height = 512;
    s.scene.speckle.count = 512 * 512 / dmdhdr::harness::SPECKLE_AREA_PER_BLOB;
    s.repetitions = 8;
    s
}

fn exposure_study() -> Outcome {
    let s = study_scenario();
    let start = Instant::now();
    let r = run_strain_study(&s).unwrap();
    let elapsed = start.elapsed();
    let levels = s.strain.level_gains.len();
    let ori: Vec<f64> = (1..=levels)
        .map(|l| r.row(l, Mode::Ori).unwrap().effective_area_pct)
        .collect();
    let dmd: Vec<f64> = (1..=levels)
        .map(|l| r.row(l, Mode::Dmd).unwrap().effective_area_pct)
        .collect();
    let sat: Vec<f64> = (1..=levels)
        .map(|l| r.row(l, Mode::Ori).unwrap().saturated_pct)
        .collect();
    let red = r.reductions[levels - 1];
    let monotone = ori.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        monotone
            && ori[levels - 1] < 100.0
            && dmd.iter().all(|&a| a == 100.0)
            && red.e1_pct >= 50.0
            && elapsed < Duration::from_secs(300),
        format!(
            "saturated {sat:.2?} %, Ori area {ori:.2?} %, DMD area {dmd:.2?} %, \
             top-level reduction e1 {:.1} % e2 {:.1} %, {:.0} s",
            red.e1_pct,
            red.e2_pct,
            elapsed.as_secs_f64()
        ),
    )
}

fn quality_study() -> Outcome {
    let s = Scenario::default();
    let r = run_quality_study(&s).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for &g in &s.quality.glares {
        let o = r.get(g, Method::Ori).unwrap();
        let d = r.get(g, Method::Dmd).unwrap();
        pass &= d.entropy >= o.entropy && d.rms_contrast >= o.rms_contrast;
        parts.push(format!(
            "{}: entropy {:.2}/{:.2} contrast {:.3}/{:.3}",
            g.name(),
            o.entropy,
            d.entropy,
            o.rms_contrast,
            d.rms_contrast
        ));
    }
    outcome(pass, format!("Ori/DMD {}", parts.join("; ")))
}

fn performance_budget() -> Outcome {
    let n = 1024;
    let mut s = Scenario::default();
    s.scene.speckle.width = n;
    s.scene.speckle.height = n;
    s.scene.speckle.count = n * n / dmdhdr::harness::SPECKLE_AREA_PER_BLOB;
    s.scene.glare = GlareKind::LocalSpot;
    // Bright enough that the core needs the floor: the longest loop.
    s.scene.presets.spot_amplitude = 1e6;
    let scene = s.scene.build().unwrap();
    let sensor = SensorModel::eight_bit();
    let dmd = DmdModel::default();
    let frame = open_capture(&scene, &sensor);
    let threshold = ControllerConfig::default().threshold(&sensor);

    let mut exps = vec![0u8; n * n];
    let mut z = vec![false; n * n];
    let mut times = Vec::new();
    for _ in 0..25 {
        exps.iter_mut().for_each(|k| *k = 0);
        let t = Instant::now();
        let stats = scan_and_update(
            frame.counts().as_slice(),
            &mut exps,
            &mut z,
            threshold,
            11,
            true,
        );
        times.push(t.elapsed());
        assert!(stats.saturated > 0);
    }
    times.sort();
    let scan = times[times.len() / 2];

    let mut loops = Vec::new();
    let mut iterations = 0;
    for _ in 0..3 {
        let t = Instant::now();
        let r = adapt_mask(
            n,
            n,
            |mask| capture(&scene, mask, &sensor, &dmd, 0),
            &sensor,
            &dmd,
            &ControllerConfig::default(),
        )
        .unwrap();
        loops.push(t.elapsed());
        iterations = r.iterations;
    }
    loops.sort();
    let full = loops[loops.len() / 2];
    outcome(
        scan <= Duration::from_millis(10) && full <= Duration::from_millis(500),
        format!(
            "scan+update {:.2} ms (median of 25), adapt loop {:.1} ms for {iterations} captures \
             (median of 3), {} threads",
            scan.as_secs_f64() * 1e3,
            full.as_secs_f64() * 1e3,
            std::thread::available_parallelism().map_or(1, |p| p.get())
        ),
    )
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = 0;
    for trial in 0..1000 {
        let w = rng.random_range(1..40);
        let h = rng.random_range(1..40);
        let pfm: Vec<f32> = (0..w * h)
            .map(|_| loop {
                let v = f32::from_bits(rng.random::<u32>());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let img = Raster::from_vec(w, h, pfm).unwrap();
        let path = dir.path().join(format!("{trial}.pfm"));
        io::write_pfm(&path, &img).unwrap();
        let back = io::read_pfm(&path).unwrap();
        let same = back
            .as_slice()
            .iter()
            .zip(img.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        failures += !same as usize;

        let depth = if trial % 2 == 0 { 8 } else { 16 };
        let max = if depth == 8 { 255u16 } else { u16::MAX };
        let counts: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..=max)).collect();
        let frame = CapturedFrame::new(Raster::from_vec(w, h, counts).unwrap(), depth).unwrap();
        let path = dir.path().join(format!("{trial}.pgm"));
        io::write_pgm(&path, &frame).unwrap();
        failures += (io::read_pgm(&path).unwrap() != frame) as usize;
    }
    outcome(
        failures == 0,
        format!("1000 PFM + 1000 PGM (8/16-bit) trials, {failures} failures"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("dynamic range arithmetic", dynamic_range_arithmetic),
        ("controller oracle equivalence", controller_oracle),
        ("127 dB reconstruction", wedge_reconstruction),
        ("DIC self-consistency", dic_self_consistency),
        ("strain oracle", strain_oracle),
        ("exposure-level strain study", exposure_study),
        ("glare quality study", quality_study),
        ("controller performance budget", performance_budget),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
