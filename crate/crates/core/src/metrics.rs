//! No-reference quality metrics on 8-bit frames, plus full-reference error
//! against the synthetic ground truth.
//!
//! Average gradient uses forward differences over pixels that have both a
//! right and a lower neighbor. Contrast is RMS contrast on intensities
//! normalized to `[0, 1]`.

use crate::hdr::HdrReconstruction;
use crate::optics::CapturedFrame;
use crate::scene::RadianceField;
use crate::{Error, Result};

fn require_8bit(frame: &CapturedFrame) -> Result<()> {
    if frame.bit_depth() != 8 {
        return Err(Error::param(
            "frame",
            "metrics take 8-bit frames; tone map HDR data first",
        ));
    }
    Ok(())
}

pub fn avg_gradient(frame: &CapturedFrame) -> Result<f64> {
    require_8bit(frame)?;
    let (w, h) = frame.dims();
    if w < 2 || h < 2 {
        return Err(Error::Dimension {
            width: w,
            height: h,
            reason: "average gradient needs at least 2x2",
        });
    }
    let c = frame.counts();
    let mut sum = 0.0;
    for y in 0..h - 1 {
        let row = c.row(y);
        let below = c.row(y + 1);
        for x in 0..w - 1 {
            let v = row[x] as f64;
            let dx = row[x + 1] as f64 - v;
            let dy = below[x] as f64 - v;
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(sum / ((w - 1) * (h - 1)) as f64)
}

pub fn histogram(frame: &CapturedFrame) -> Result<[u64; 256]> {
    require_8bit(frame)?;
    let mut hist = [0u64; 256];
    for &c in frame.counts().as_slice() {
        hist[c as usize] += 1;
    }
    Ok(hist)
}

/// Shannon entropy of the 256-bin histogram, bits.
pub fn entropy(frame: &CapturedFrame) -> Result<f64> {
    let hist = histogram(frame)?;
    let n = frame.counts().len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

pub fn rms_contrast(frame: &CapturedFrame) -> Result<f64> {
    require_8bit(frame)?;
    let data = frame.counts().as_slice();
    let n = data.len() as f64;
    let mean = data.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(var.sqrt() / 255.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityMetrics {
    pub avg_gradient: f64,
    pub entropy: f64,
    pub rms_contrast: f64,
}

pub fn quality(frame: &CapturedFrame) -> Result<QualityMetrics> {
    Ok(QualityMetrics {
        avg_gradient: avg_gradient(frame)?,
        entropy: entropy(frame)?,
        rms_contrast: rms_contrast(frame)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceError {
    pub rmse: f64,
    /// Largest `|estimate - truth| / truth` over valid pixels with truth > 0.
    pub max_rel: f64,
    pub valid_fraction: f64,
}

pub fn reference_error(recon: &HdrReconstruction, truth: &RadianceField) -> Result<ReferenceError> {
    truth.raster().ensure_dims(recon.dims())?;
    let mut sq = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut n = 0usize;
    for ((&est, &ok), &t) in recon
        .radiance()
        .as_slice()
        .iter()
        .zip(recon.valid().as_slice())
        .zip(truth.raster().as_slice())
    {
        if !ok {
            continue;
        }
        let d = est - t;
        sq += d * d;
        if t > 0.0 {
            max_rel = max_rel.max(d.abs() / t);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels("reference_error needs valid pixels"));
    }
    Ok(ReferenceError {
        rmse: (sq / n as f64).sqrt(),
        max_rel,
        valid_fraction: n as f64 / recon.valid().len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Raster;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> CapturedFrame {
        let data: Vec<u8> = (0..w * h).map(|i| f(i % w, i / w)).collect();
        CapturedFrame::from_u8(w, h, &data).unwrap()
    }

    #[test]
    fn constant_image_scores_zero() {
        let f = frame(8, 8, |_, _| 100);
        assert_eq!(avg_gradient(&f).unwrap(), 0.0);
        assert_eq!(entropy(&f).unwrap(), 0.0);
        assert_eq!(rms_contrast(&f).unwrap(), 0.0);
    }

    #[test]
    fn ramp_gradient() {
        let f = frame(50, 10, |x, _| x as u8);
        assert!((avg_gradient(&f).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_gradient() {
        let f = frame(9, 9, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        assert!((avg_gradient(&f).unwrap() - 255.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        let f = frame(256, 4, |x, _| x as u8);
        assert!((entropy(&f).unwrap() - 8.0).abs() < 1e-12);
        let f = frame(10, 10, |x, _| if x < 5 { 0 } else { 255 });
        assert!((entropy(&f).unwrap() - 1.0).abs() < 1e-12);
        assert!((rms_contrast(&f).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn needs_eight_bit_and_two_by_two() {
        let f16 = CapturedFrame::new(Raster::filled(4, 4, 1000u16).unwrap(), 16).unwrap();
        assert!(entropy(&f16).is_err());
        assert!(avg_gradient(&frame(1, 5, |_, _| 0)).is_err());
    }

    #[test]
    fn reference_error_cases() {
        let truth = RadianceField::from_fn(16, 16, |x, y| 1.0 + (x * y) as f64).unwrap();
        let exact = HdrReconstruction::new(
            truth.raster().clone(),
            Raster::filled(16, 16, true).unwrap(),
        )
        .unwrap();
        let e = reference_error(&exact, &truth).unwrap();
        assert_eq!((e.rmse, e.max_rel, e.valid_fraction), (0.0, 0.0, 1.0));

        let mut bumped = truth.raster().clone();
        *bumped.get_mut(3, 4) += 0.8;
        let r = HdrReconstruction::new(bumped, Raster::filled(16, 16, true).unwrap()).unwrap();
        let e = reference_error(&r, &truth).unwrap();
        assert!((e.rmse - 0.8 / 16.0).abs() < 1e-12);
        assert!((e.max_rel - 0.8 / 13.0).abs() < 1e-12);

        let half = Raster::from_fn(16, 16, |x, _| x < 8).unwrap();
        let r = HdrReconstruction::new(truth.raster().clone(), half).unwrap();
        assert_eq!(reference_error(&r, &truth).unwrap().valid_fraction, 0.5);

        let none = HdrReconstruction::new(
            truth.raster().clone(),
            Raster::filled(16, 16, false).unwrap(),
        )
        .unwrap();
        assert!(reference_error(&none, &truth).is_err());
    }
}
