//! Inverse-modulation reconstruction and dynamic-range bookkeeping.

use crate::optics::{mu_of, CapturedFrame, DmdModel, ModulationMask, SensorModel};
use crate::{par, Error, Raster, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DrReport {
    pub theoretical_db: Option<f64>,
    pub measured_db: Option<f64>,
}

/// Estimated radiance with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrReconstruction {
    radiance: Raster<f64>,
    valid: Raster<bool>,
    pub dr_report: DrReport,
}

impl HdrReconstruction {
    pub fn new(radiance: Raster<f64>, valid: Raster<bool>) -> Result<Self> {
        valid.ensure_dims(radiance.dims())?;
        let w = radiance.width();
        for (i, (&v, &ok)) in radiance.as_slice().iter().zip(valid.as_slice()).enumerate() {
            if ok && !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidValue {
                    x: i % w,
                    y: i / w,
                    reason: format!("valid estimate must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(Self {
            radiance,
            valid,
            dr_report: DrReport::default(),
        })
    }

    pub fn radiance(&self) -> &Raster<f64> {
        &self.radiance
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.radiance.dims()
    }

    pub fn valid_fraction(&self) -> f64 {
        par::count(self.valid.as_slice(), |&v| v) as f64 / self.valid.len() as f64
    }

    pub fn with_theoretical(mut self, db: f64) -> Self {
        self.dr_report.theoretical_db = Some(db);
        self
    }
}

/// `I = counts / (mu * gain * t)`. A pixel is invalid only when it clipped
/// with its mirror already at the attenuation floor; such pixels report the
/// lower bound `s_max * 2^max_exponent / (gain * t)`.
pub fn reconstruct(
    frame: &CapturedFrame,
    mask: &ModulationMask,
    sensor: &SensorModel,
) -> Result<HdrReconstruction> {
    sensor.validate()?;
    frame.counts().ensure_dims(mask.dims())?;
    let (w, h) = frame.dims();
    let resp = sensor.responsivity();
    let s_max = frame.s_max();
    let floor = mask.max_exponent();
    let counts = frame.counts();
    let exps = mask.exponents();

    let radiance = Raster::from_fn(w, h, |x, y| {
        let mu = mu_of(*exps.get(x, y));
        *counts.get(x, y) as f64 / (mu * resp)
    })?;
    let valid = Raster::from_fn(w, h, |x, y| {
        !(*counts.get(x, y) == s_max && *exps.get(x, y) == floor)
    })?;
    let mut recon = HdrReconstruction::new(radiance, valid)?;
    recon.dr_report.measured_db = measured_dr(&recon).ok();
    Ok(recon)
}

/// `intrinsic + 20 lg(ratio)`, with `ratio = t_ratio` or, when
/// `use_mask_ratio` is set, the mask depth `2^max_exponent`.
pub fn theoretical_dr(sensor: &SensorModel, dmd: &DmdModel, use_mask_ratio: bool) -> f64 {
    let ratio = if use_mask_ratio {
        (1u64 << dmd.max_exponent) as f64
    } else {
        dmd.t_ratio
    };
    sensor.intrinsic_db() + 20.0 * ratio.log10()
}

/// `20 lg(max valid / min positive valid)`.
pub fn measured_dr(recon: &HdrReconstruction) -> Result<f64> {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut n = 0usize;
    for (&v, &ok) in recon.radiance.as_slice().iter().zip(recon.valid.as_slice()) {
        if ok && v > 0.0 {
            hi = hi.max(v);
            lo = lo.min(v);
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::NoValidPixels(
            "measured_dr needs at least two valid positive estimates",
        ));
    }
    Ok(20.0 * (hi / lo).log10())
}

/// Global min/max normalization of valid pixels, `v^(1/gamma)`, 8-bit
/// quantization. Invalid pixels map to 255; a flat valid range maps to 0.
pub fn tone_map(recon: &HdrReconstruction, gamma: f64) -> Result<CapturedFrame> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be > 0, got {gamma}")));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &ok) in recon.radiance.as_slice().iter().zip(recon.valid.as_slice()) {
        if ok {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    let inv_gamma = 1.0 / gamma;
    let (w, h) = recon.dims();
    let out = Raster::from_fn(w, h, |x, y| {
        if !recon.valid.get(x, y) {
            return 255u16;
        }
        if span.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return 0;
        }
        let t = ((recon.radiance.get(x, y) - lo) / span).clamp(0.0, 1.0);
        (255.0 * t.powf(inv_gamma)).round() as u16
    })?;
    CapturedFrame::new(out, 8)
}
