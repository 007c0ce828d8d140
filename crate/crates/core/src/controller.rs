//! Closed-loop adaptive mask generation.
//!
//! Starting from a fully open mask, every pixel whose reading exceeds
//! `S_th = threshold_factor * s_max` has its attenuation halved (its exponent
//! incremented) and the scene is captured again. Updates are one-directional:
//! an exponent never decreases, so noisy readings near the threshold cannot
//! make the mask oscillate.

use crate::optics::{mu_of, CapturedFrame, DmdModel, ModulationMask, SensorModel};
use crate::{Error, Raster, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rectangular region `[x0, x1) x [y0, y1)` pre-attenuated before the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suppression {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub exponent: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub threshold_factor: f64,
    /// Cap on captures. `None` means `max_exponent + 2`.
    pub max_iterations: Option<usize>,
    pub record_trace: bool,
    /// Stop as soon as any pixel reaches the floor, as the published loop's
    /// `min(M) = M_min` test reads literally.
    pub literal_break: bool,
    pub suppression: Vec<Suppression>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            threshold_factor: 0.95,
            max_iterations: None,
            record_trace: false,
            literal_break: false,
            suppression: Vec::new(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_factor > 0.0 && self.threshold_factor < 1.0) {
            return Err(Error::param(
                "threshold_factor",
                format!("must lie in (0, 1), got {}", self.threshold_factor),
            ));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::param("max_iterations", "must be >= 1"));
        }
        Ok(())
    }

    pub fn threshold(&self, sensor: &SensorModel) -> f64 {
        self.threshold_factor * sensor.s_max() as f64
    }

    pub fn iteration_cap(&self, dmd: &DmdModel) -> usize {
        self.max_iterations.unwrap_or(dmd.max_exponent as usize + 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub saturated_count: usize,
    pub min_mu: f64,
    pub max_mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub mask: ModulationMask,
    /// Number of captures taken.
    pub iterations: usize,
    /// Pixels above threshold in the last capture.
    pub residual_saturated: Raster<bool>,
    pub trace: Option<Vec<TraceRow>>,
    /// The iteration cap stopped the loop while some saturated pixel could
    /// still have been attenuated.
    pub exhausted: bool,
    /// Frame captured under `mask`.
    pub final_frame: CapturedFrame,
}

impl AdaptationResult {
    pub fn residual_count(&self) -> usize {
        self.residual_saturated
            .as_slice()
            .iter()
            .filter(|&&z| z)
            .count()
    }
}

/// Outcome of one threshold scan over a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanStats {
    pub saturated: usize,
    pub at_floor: usize,
    pub attenuated: usize,
}

/// Marks `z[i] = counts[i] > threshold`, halving the attenuation of marked
/// pixels below the floor when `update` is set.
pub fn scan_and_update(
    counts: &[u16],
    exponents: &mut [u8],
    z: &mut [bool],
    threshold: f64,
    floor: u8,
    update: bool,
) -> ScanStats {
    let step = |(&c, (k, s)): (&u16, (&mut u8, &mut bool))| {
        let sat = c as f64 > threshold;
        *s = sat;
        if !sat {
            return ScanStats::default();
        }
        if *k >= floor {
            return ScanStats {
                saturated: 1,
                at_floor: 1,
                attenuated: 0,
            };
        }
        if update {
            *k += 1;
        }
        ScanStats {
            saturated: 1,
            at_floor: 0,
            attenuated: update as usize,
        }
    };
    let add = |a: ScanStats, b: ScanStats| ScanStats {
        saturated: a.saturated + b.saturated,
        at_floor: a.at_floor + b.at_floor,
        attenuated: a.attenuated + b.attenuated,
    };

    #[cfg(feature = "parallel")]
    return counts
        .par_iter()
        .zip(exponents.par_iter_mut().zip(z.par_iter_mut()))
        .with_min_len(4096)
        .map(step)
        .reduce(ScanStats::default, add);
    #[cfg(not(feature = "parallel"))]
    return counts
        .iter()
        .zip(exponents.iter_mut().zip(z.iter_mut()))
        .map(step)
        .fold(ScanStats::default(), add);
}

/// Runs the adaptive loop. `capture_fn` must return frames of the mask's size.
pub fn adapt_mask<F>(
    width: usize,
    height: usize,
    mut capture_fn: F,
    sensor: &SensorModel,
    dmd: &DmdModel,
    config: &ControllerConfig,
) -> Result<AdaptationResult>
where
    F: FnMut(&ModulationMask) -> Result<CapturedFrame>,
{
    config.validate()?;
    dmd.validate()?;
    let floor = dmd.max_exponent;
    let threshold = config.threshold(sensor);
    let cap = config.iteration_cap(dmd);

    let mut mask = ModulationMask::ones(width, height, floor)?;
    for s in &config.suppression {
        if s.exponent > floor || s.x1 > width || s.y1 > height || s.x0 >= s.x1 || s.y0 >= s.y1 {
            return Err(Error::param(
                "suppression",
                format!("region {s:?} does not fit a {width}x{height} mask with floor {floor}"),
            ));
        }
        let exps = mask.exponents_mut();
        for y in s.y0..s.y1 {
            for k in &mut exps[y * width + s.x0..y * width + s.x1] {
                *k = (*k).max(s.exponent);
            }
        }
    }

    let mut z = vec![false; width * height];
    let mut trace = config.record_trace.then(Vec::new);
    let mut frame = capture_fn(&mask)?;
    let mut iterations = 1;
    let mut exhausted = false;

    loop {
        frame.counts().ensure_dims((width, height))?;
        let stop_literal = config.literal_break && mask.min_mu() <= mu_of(floor);
        let may_update = iterations < cap && !stop_literal;
        // Bounds of the mask this frame was captured under.
        let bounds = trace.is_some().then(|| (mask.min_mu(), mask.max_mu()));
        let stats = scan_and_update(
            frame.counts().as_slice(),
            mask.exponents_mut(),
            &mut z,
            threshold,
            floor,
            may_update,
        );
        if let (Some(t), Some((min_mu, max_mu))) = (trace.as_mut(), bounds) {
            t.push(TraceRow {
                iteration: iterations,
                saturated_count: stats.saturated,
                min_mu,
                max_mu,
            });
        }
        if stats.attenuated == 0 {
            if stats.saturated > stats.at_floor && !stop_literal {
                exhausted = true;
            }
            break;
        }
        frame = capture_fn(&mask)?;
        iterations += 1;
    }

    Ok(AdaptationResult {
        mask,
        iterations,
        residual_saturated: Raster::from_vec(width, height, z)?,
        trace,
        exhausted,
        final_frame: frame,
    })
}

/// Convenience wrapper capturing a fixed scene through [`crate::optics::capture`].
pub fn adapt_scene(
    scene: &crate::scene::RadianceField,
    sensor: &SensorModel,
    dmd: &DmdModel,
    config: &ControllerConfig,
    noise_seed: u64,
) -> Result<AdaptationResult> {
    let (w, h) = scene.dims();
    let mut n = 0u64;
    adapt_mask(
        w,
        h,
        |mask| {
            // Each capture is a fresh noise realization.
            let seed = noise_seed.wrapping_add(n.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            n += 1;
            crate::optics::capture(scene, mask, sensor, dmd, seed)
        },
        sensor,
        dmd,
        config,
    )
}
