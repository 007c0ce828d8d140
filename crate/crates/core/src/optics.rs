//! Sensor + DMD capture chain and the two baseline methods (SVE, CLAHE).
//!
//! The DMD realizes an attenuation `mu = 2^-k` per pixel as a PWM duty cycle
//! over `2^max_exponent` time slots, so the time-sliced exposure sum collapses
//! to a single per-pixel scalar in front of the (optionally blurred) radiance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::hdr::{DrReport, HdrReconstruction};
use crate::scene::RadianceField;
use crate::{par, Error, Raster, Result};

/// Identifier of the per-row noise streams, recorded in run manifests.
///
/// Row `y` draws from `ChaCha8Rng::seed_from_u64(noise_seed)` with
/// `set_stream(y)`: shot noise (if enabled) first, then read noise, per pixel
/// left to right.
pub const NOISE_PRNG: &str = "chacha8-seed_from_u64/stream=row";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    bit_depth: u8,
    /// Counts per (radiance unit * second).
    pub gain: f64,
    pub exposure_time: f64,
    pub read_noise_sigma: f64,
    pub shot_noise: bool,
    /// Intrinsic dynamic range. `None` falls back to `20 lg(s_max)`.
    pub intrinsic_dr_db: Option<f64>,
}

impl SensorModel {
    pub fn new(bit_depth: u8, gain: f64, exposure_time: f64) -> Result<Self> {
        let s = Self {
            bit_depth,
            gain,
            exposure_time,
            read_noise_sigma: 0.0,
            shot_noise: false,
            intrinsic_dr_db: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn eight_bit() -> Self {
        Self::new(8, 1.0, 1.0).expect("valid defaults")
    }

    /// 16-bit sCMOS configuration with the 87 dB intrinsic range.
    pub fn scmos_16bit() -> Self {
        Self {
            intrinsic_dr_db: Some(87.0),
            ..Self::new(16, 1.0, 1.0).expect("valid defaults")
        }
    }

    pub fn with_bit_depth(mut self, bit_depth: u8) -> Result<Self> {
        self.bit_depth = bit_depth;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(Error::param(
                "bit_depth",
                format!("must be 8 or 16, got {}", self.bit_depth),
            ));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::param(
                "gain",
                format!("must be > 0, got {}", self.gain),
            ));
        }
        if !(self.exposure_time > 0.0 && self.exposure_time.is_finite()) {
            return Err(Error::param(
                "exposure_time",
                format!("must be > 0, got {}", self.exposure_time),
            ));
        }
        if !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite()) {
            return Err(Error::param(
                "read_noise_sigma",
                format!("must be >= 0, got {}", self.read_noise_sigma),
            ));
        }
        if let Some(db) = self.intrinsic_dr_db {
            if !(db > 0.0 && db.is_finite()) {
                return Err(Error::param(
                    "intrinsic_dr_db",
                    format!("must be > 0, got {db}"),
                ));
            }
        }
        Ok(())
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn s_max(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    /// Counts per unit radiance at full transmission.
    pub fn responsivity(&self) -> f64 {
        self.gain * self.exposure_time
    }

    pub fn intrinsic_db(&self) -> f64 {
        self.intrinsic_dr_db
            .unwrap_or_else(|| 20.0 * (self.s_max() as f64).log10())
    }

    pub fn noiseless(&self) -> bool {
        self.read_noise_sigma == 0.0 && !self.shot_noise
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::eight_bit()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmdModel {
    pub max_exponent: u8,
    /// `T_max / T_min` of the PWM timing.
    pub t_ratio: f64,
    /// Residual transmission of an OFF mirror.
    pub off_leakage: f64,
    /// Gaussian blur sigma of the relay optics, pixels. Zero disables it.
    pub psf_sigma: f64,
}

impl Default for DmdModel {
    fn default() -> Self {
        Self {
            max_exponent: 11,
            t_ratio: 100.0,
            off_leakage: 0.0,
            psf_sigma: 0.0,
        }
    }
}

impl DmdModel {
    pub fn validate(&self) -> Result<()> {
        if self.max_exponent > 15 {
            return Err(Error::param(
                "max_exponent",
                format!("must be <= 15, got {}", self.max_exponent),
            ));
        }
        if !(self.t_ratio >= 1.0 && self.t_ratio.is_finite()) {
            return Err(Error::param(
                "t_ratio",
                format!("must be >= 1, got {}", self.t_ratio),
            ));
        }
        if !(0.0..0.01).contains(&self.off_leakage) {
            return Err(Error::param(
                "off_leakage",
                format!("must be in [0, 0.01), got {}", self.off_leakage),
            ));
        }
        if !(self.psf_sigma >= 0.0 && self.psf_sigma.is_finite()) {
            return Err(Error::param(
                "psf_sigma",
                format!("must be >= 0, got {}", self.psf_sigma),
            ));
        }
        Ok(())
    }

    /// Attenuation floor `2^-max_exponent`.
    pub fn mu_min(&self) -> f64 {
        mu_of(self.max_exponent)
    }
}

#[inline]
pub fn mu_of(exponent: u8) -> f64 {
    1.0 / (1u32 << exponent) as f64
}

/// Per-pixel power-of-two attenuation, stored as exponents `k` with `mu = 2^-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationMask {
    exponents: Raster<u8>,
    max_exponent: u8,
}

impl ModulationMask {
    /// Fully open mask (`k = 0` everywhere).
    pub fn ones(width: usize, height: usize, max_exponent: u8) -> Result<Self> {
        Ok(Self {
            exponents: Raster::filled(width, height, 0)?,
            max_exponent,
        })
    }

    pub fn from_exponents(exponents: Raster<u8>, max_exponent: u8) -> Result<Self> {
        if let Some(i) = exponents.as_slice().iter().position(|&k| k > max_exponent) {
            let w = exponents.width();
            return Err(Error::InvalidValue {
                x: i % w,
                y: i / w,
                reason: format!(
                    "exponent {} exceeds max_exponent {max_exponent}",
                    exponents.as_slice()[i]
                ),
            });
        }
        Ok(Self {
            exponents,
            max_exponent,
        })
    }

    pub fn exponents(&self) -> &Raster<u8> {
        &self.exponents
    }

    pub(crate) fn exponents_mut(&mut self) -> &mut [u8] {
        self.exponents.as_mut_slice()
    }

    pub fn max_exponent(&self) -> u8 {
        self.max_exponent
    }

    pub fn dims(&self) -> (usize, usize) {
        self.exponents.dims()
    }

    pub fn exponent(&self, x: usize, y: usize) -> u8 {
        *self.exponents.get(x, y)
    }

    pub fn mu(&self, x: usize, y: usize) -> f64 {
        mu_of(self.exponent(x, y))
    }

    pub fn min_mu(&self) -> f64 {
        mu_of(self.exponents.as_slice().iter().copied().max().unwrap_or(0))
    }

    pub fn max_mu(&self) -> f64 {
        mu_of(self.exponents.as_slice().iter().copied().min().unwrap_or(0))
    }

    pub fn is_all_ones(&self) -> bool {
        self.exponents.as_slice().iter().all(|&k| k == 0)
    }
}

/// Quantized sensor output. The clip flag is `counts == s_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedFrame {
    counts: Raster<u16>,
    bit_depth: u8,
}

impl CapturedFrame {
    pub fn new(counts: Raster<u16>, bit_depth: u8) -> Result<Self> {
        let s_max = match bit_depth {
            8 => 255u16,
            16 => 65535,
            other => {
                return Err(Error::param(
                    "bit_depth",
                    format!("must be 8 or 16, got {other}"),
                ))
            }
        };
        if let Some(i) = counts.as_slice().iter().position(|&c| c > s_max) {
            let w = counts.width();
            return Err(Error::InvalidValue {
                x: i % w,
                y: i / w,
                reason: format!("count {} exceeds s_max {s_max}", counts.as_slice()[i]),
            });
        }
        Ok(Self { counts, bit_depth })
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            Raster::from_vec(width, height, data.iter().map(|&v| v as u16).collect())?,
            8,
        )
    }

    pub fn counts(&self) -> &Raster<u16> {
        &self.counts
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn s_max(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    pub fn dims(&self) -> (usize, usize) {
        self.counts.dims()
    }

    pub fn width(&self) -> usize {
        self.counts.width()
    }

    pub fn height(&self) -> usize {
        self.counts.height()
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        *self.counts.get(x, y)
    }

    pub fn clipped(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == self.s_max()
    }

    pub fn clip_mask(&self) -> Raster<bool> {
        let s_max = self.s_max();
        self.counts.map(|&c| c == s_max)
    }

    pub fn clipped_fraction(&self) -> f64 {
        let s_max = self.s_max();
        par::count(self.counts.as_slice(), |&c| c == s_max) as f64 / self.counts.len() as f64
    }

    /// Fraction of pixels strictly above `threshold` counts.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        par::count(self.counts.as_slice(), |&c| c as f64 > threshold) as f64
            / self.counts.len() as f64
    }

    pub fn to_f64(&self) -> Raster<f64> {
        self.counts.map(|&c| c as f64)
    }
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub(crate) fn gaussian_blur(src: &Raster<f64>, sigma: f64) -> Result<Raster<f64>> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let (w, h) = src.dims();

    let horiz = Raster::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * src.get_clamped(x as isize + i as isize - radius, y as isize))
            .sum::<f64>()
    })?;
    Raster::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * horiz.get_clamped(x as isize, y as isize + i as isize - radius))
            .sum::<f64>()
    })
}

/// Turns an expected count into a sensor reading. `rng` is `None` when the
/// sensor is noiseless.
#[inline]
fn read_out(expected: f64, sensor: &SensorModel, s_max: u16, rng: Option<&mut ChaCha8Rng>) -> u16 {
    let mut v = expected;
    if let Some(rng) = rng {
        if sensor.shot_noise && v > 0.0 {
            // Poisson is only defined for finite positive rates; past the
            // clip level the sample cannot matter anyway.
            if v < 1.0e9 {
                v = Poisson::new(v).map(|p| p.sample(rng)).unwrap_or(v);
            }
        }
        if sensor.read_noise_sigma > 0.0 {
            let n = Normal::new(0.0, sensor.read_noise_sigma).expect("sigma validated");
            v += n.sample(rng);
        }
    }
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r >= s_max as f64 {
        s_max
    } else {
        r as u16
    }
}

fn row_rng(noise_seed: u64, y: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(y as u64);
    rng
}

/// Generic per-pixel capture: `expected(x, y, irradiance)` gives the mean count.
fn capture_with<F>(
    irradiance: &Raster<f64>,
    sensor: &SensorModel,
    noise_seed: u64,
    expected: F,
) -> Result<CapturedFrame>
where
    F: Fn(usize, usize, f64) -> f64 + Sync + Send,
{
    let (w, h) = irradiance.dims();
    let s_max = sensor.s_max();
    let noisy = !sensor.noiseless();
    let mut counts = vec![0u16; w * h];
    par::for_each_row(&mut counts, w, |y, row| {
        let mut rng = noisy.then(|| row_rng(noise_seed, y));
        let src = irradiance.row(y);
        for (x, c) in row.iter_mut().enumerate() {
            let e = expected(x, y, src[x]);
            *c = read_out(e, sensor, s_max, rng.as_mut());
        }
    });
    CapturedFrame::new(Raster::from_vec(w, h, counts)?, sensor.bit_depth())
}

/// Simulates one exposure through the DMD:
/// `counts = clip(round(gain * t * mu_eff * (I * PSF) + noise), 0, s_max)`
/// with `mu_eff = mu + off_leakage * (1 - mu)`.
pub fn capture(
    scene: &RadianceField,
    mask: &ModulationMask,
    sensor: &SensorModel,
    dmd: &DmdModel,
    noise_seed: u64,
) -> Result<CapturedFrame> {
    sensor.validate()?;
    dmd.validate()?;
    scene.raster().ensure_dims(mask.dims())?;
    if mask.max_exponent() > dmd.max_exponent {
        return Err(Error::param(
            "mask",
            format!(
                "mask allows exponent {} but the DMD floor is {}",
                mask.max_exponent(),
                dmd.max_exponent
            ),
        ));
    }
    let blurred;
    let irradiance = if dmd.psf_sigma > 0.0 {
        blurred = gaussian_blur(scene.raster(), dmd.psf_sigma)?;
        &blurred
    } else {
        scene.raster()
    };
    let resp = sensor.responsivity();
    let leak = dmd.off_leakage;
    let exps = mask.exponents();
    capture_with(irradiance, sensor, noise_seed, |x, y, i| {
        let mu = mu_of(*exps.get(x, y));
        let mu_eff = mu + leak * (1.0 - mu);
        resp * mu_eff * i
    })
}

/// Largest power of two `2^-k <= value`, floored at `2^-max_exponent`.
pub fn pwm_quantize(attenuation: &Raster<f64>, dmd: &DmdModel) -> Result<ModulationMask> {
    let w = attenuation.width();
    let mut exps = Vec::with_capacity(attenuation.len());
    for (i, &v) in attenuation.as_slice().iter().enumerate() {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidValue {
                x: i % w,
                y: i / w,
                reason: format!("attenuation must lie in (0, 1], got {v}"),
            });
        }
        let mut k = 0u8;
        while k < dmd.max_exponent && mu_of(k) > v {
            k += 1;
        }
        exps.push(k);
    }
    ModulationMask::from_exponents(
        Raster::from_vec(w, attenuation.height(), exps)?,
        dmd.max_exponent,
    )
}

/// 2x2 mosaic of exposure scales; `scales[row][col]` covers pixels with
/// `(y % 2, x % 2) == (row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvePattern {
    pub scales: [[f64; 2]; 2],
}

impl Default for SvePattern {
    fn default() -> Self {
        Self {
            scales: [[1.0, 0.25], [1.0 / 16.0, 1.0 / 64.0]],
        }
    }
}

impl SvePattern {
    pub fn validate(&self) -> Result<()> {
        let flat: Vec<f64> = self.scales.iter().flatten().copied().collect();
        if flat.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::param("sve_pattern", "scales must be finite and > 0"));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if flat[i] == flat[j] {
                    return Err(Error::param("sve_pattern", "scales must be distinct"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn scale_at(&self, x: usize, y: usize) -> f64 {
        self.scales[y % 2][x % 2]
    }
}

fn ensure_even(width: usize, height: usize) -> Result<()> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Dimension {
            width,
            height,
            reason: "SVE mosaics need even dimensions",
        });
    }
    Ok(())
}

/// Capture through a fixed spatially varying exposure mosaic.
pub fn sve_capture(
    scene: &RadianceField,
    sensor: &SensorModel,
    pattern: &SvePattern,
    noise_seed: u64,
) -> Result<CapturedFrame> {
    sensor.validate()?;
    pattern.validate()?;
    let (w, h) = scene.dims();
    ensure_even(w, h)?;
    let resp = sensor.responsivity();
    capture_with(scene.raster(), sensor, noise_seed, |x, y, i| {
        resp * pattern.scale_at(x, y) * i
    })
}

/// Fuses an SVE frame: per 2x2 cell, the largest unclipped sample divided by
/// its scale; cell estimates are bilinearly upsampled between cell centers.
/// A cell whose four samples all clip is invalid and reports the lower
/// bound `s_max / (min_scale * gain * t)`.
pub fn sve_fuse(
    frame: &CapturedFrame,
    pattern: &SvePattern,
    sensor: &SensorModel,
) -> Result<HdrReconstruction> {
    pattern.validate()?;
    let (w, h) = frame.dims();
    ensure_even(w, h)?;
    let (cw, ch) = (w / 2, h / 2);
    let s_max = frame.s_max();
    let resp = sensor.responsivity();
    let min_scale = pattern
        .scales
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let cells: Vec<(f64, bool)> = par::map_range(cw * ch, |i| {
        let (cx, cy) = (i % cw, i / cw);
        let mut best: Option<(u16, f64)> = None;
        for dy in 0..2 {
            for dx in 0..2 {
                let (x, y) = (2 * cx + dx, 2 * cy + dy);
                let c = frame.get(x, y);
                if c == s_max {
                    continue;
                }
                let s = pattern.scale_at(x, y);
                best = match best {
                    Some((bc, bs)) if bc > c || (bc == c && bs >= s) => Some((bc, bs)),
                    _ => Some((c, s)),
                };
            }
        }
        match best {
            Some((c, s)) => (c as f64 / (s * resp), true),
            None => (s_max as f64 / (min_scale * resp), false),
        }
    });

    // Bilinear weights over valid neighbor cells only; cell centers sit at
    // (2c + 0.5) in pixel coordinates.
    let cell = |cx: isize, cy: isize| cells[cy as usize * cw + cx as usize];
    let mut radiance = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    par::for_each_row(&mut radiance, w, |y, row| {
        let fy = ((y as f64 - 0.5) / 2.0).clamp(0.0, (ch - 1) as f64);
        let y0 = fy.floor() as isize;
        let y1 = (y0 + 1).min(ch as isize - 1);
        let ty = fy - y0 as f64;
        for (x, out) in row.iter_mut().enumerate() {
            let own = cells[(y / 2) * cw + x / 2];
            if !own.1 {
                *out = own.0;
                continue;
            }
            let fx = ((x as f64 - 0.5) / 2.0).clamp(0.0, (cw - 1) as f64);
            let x0 = fx.floor() as isize;
            let x1 = (x0 + 1).min(cw as isize - 1);
            let tx = fx - x0 as f64;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (cx, cy, wgt) in [
                (x0, y0, (1.0 - tx) * (1.0 - ty)),
                (x1, y0, tx * (1.0 - ty)),
                (x0, y1, (1.0 - tx) * ty),
                (x1, y1, tx * ty),
            ] {
                let (v, ok) = cell(cx, cy);
                if ok && wgt > 0.0 {
                    acc += wgt * v;
                    wsum += wgt;
                }
            }
            *out = if wsum > 0.0 { acc / wsum } else { own.0 };
        }
    });
    for (i, v) in valid.iter_mut().enumerate() {
        *v = cells[(i / w / 2) * cw + (i % w) / 2].1;
    }
    let mut recon = HdrReconstruction::new(
        Raster::from_vec(w, h, radiance)?,
        Raster::from_vec(w, h, valid)?,
    )?;
    recon.dr_report = DrReport {
        theoretical_db: Some(sensor.intrinsic_db() + 20.0 * (1.0 / min_scale).log10()),
        measured_db: crate::hdr::measured_dr(&recon).ok(),
    };
    Ok(recon)
}

/// Number of histogram bins used by [`clahe`], independent of bit depth.
pub const CLAHE_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    /// Bin ceiling as a fraction of the tile's pixel count; `1.0` disables
    /// clipping.
    pub clip_limit: f64,
    pub tiles: (usize, usize),
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            clip_limit: 0.02,
            tiles: (8, 8),
        }
    }
}

/// Bin index of a raw count: 16-bit frames use their top 8 bits.
#[inline]
pub(crate) fn clahe_bin(count: u16, bit_depth: u8) -> usize {
    if bit_depth == 16 {
        (count >> 8) as usize
    } else {
        count as usize
    }
}

/// Clips `hist` at `ceiling` and spreads the excess uniformly, repeating
/// until no bin exceeds the ceiling. Totals are preserved.
pub(crate) fn clip_histogram(hist: &mut [f64; CLAHE_BINS], ceiling: f64) {
    for _ in 0..64 {
        let excess: f64 = hist.iter().map(|&c| (c - ceiling).max(0.0)).sum();
        if excess <= 1e-9 {
            break;
        }
        let free = hist.iter().filter(|&&c| c < ceiling).count();
        if free == 0 {
            break;
        }
        for c in hist.iter_mut() {
            if *c > ceiling {
                *c = ceiling;
            }
        }
        // Hand the excess only to bins with headroom; whatever overshoots goes
        // around again.
        let share = excess / free as f64;
        for c in hist.iter_mut() {
            if *c < ceiling {
                *c += share;
            }
        }
    }
    for c in hist.iter_mut() {
        if *c > ceiling {
            *c = ceiling;
        }
    }
}

/// Clipped histogram of one tile; `pixels` yields bin indices.
pub(crate) fn tile_histogram(
    bins: impl Iterator<Item = usize>,
    clip_limit: f64,
) -> ([f64; CLAHE_BINS], f64) {
    let mut hist = [0.0f64; CLAHE_BINS];
    let mut n = 0.0;
    for b in bins {
        hist[b] += 1.0;
        n += 1.0;
    }
    if clip_limit < 1.0 {
        // Never clip below the uniform level, or mass cannot be conserved.
        let ceiling = (clip_limit * n).max(n / CLAHE_BINS as f64);
        clip_histogram(&mut hist, ceiling);
    }
    (hist, n)
}

/// Contrast-limited adaptive histogram equalization to an 8-bit frame.
/// Frames that do not divide evenly into tiles are padded by edge
/// replication for the histograms.
pub fn clahe(frame: &CapturedFrame, params: &ClaheParams) -> Result<CapturedFrame> {
    let (rows, cols) = params.tiles;
    if rows == 0 || cols == 0 {
        return Err(Error::param("tiles", "need at least one tile per axis"));
    }
    if !(params.clip_limit > 0.0 && params.clip_limit <= 1.0) {
        return Err(Error::param(
            "clip_limit",
            format!("must lie in (0, 1], got {}", params.clip_limit),
        ));
    }
    let (w, h) = frame.dims();
    let tw = w.div_ceil(cols);
    let th = h.div_ceil(rows);
    let depth = frame.bit_depth();
    let counts = frame.counts();

    let luts: Vec<[u8; CLAHE_BINS]> = par::map_range(rows * cols, |t| {
        let (tx, ty) = (t % cols, t / cols);
        let bins = (0..th).flat_map(|dy| {
            (0..tw).map(move |dx| {
                let x = (tx * tw + dx).min(w - 1);
                let y = (ty * th + dy).min(h - 1);
                clahe_bin(*counts.get(x, y), depth)
            })
        });
        let (hist, n) = tile_histogram(bins, params.clip_limit);
        let mut lut = [0u8; CLAHE_BINS];
        let mut cdf = 0.0;
        for (b, c) in hist.iter().enumerate() {
            cdf += c;
            lut[b] = (255.0 * cdf / n).round().clamp(0.0, 255.0) as u8;
        }
        lut
    });

    // Blend between the four nearest tile centers.
    let out = Raster::from_fn(w, h, |x, y| {
        let b = clahe_bin(*counts.get(x, y), depth);
        let gx = ((x as f64 + 0.5) / tw as f64 - 0.5).clamp(0.0, (cols - 1) as f64);
        let gy = ((y as f64 + 0.5) / th as f64 - 0.5).clamp(0.0, (rows - 1) as f64);
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let x1 = (x0 + 1).min(cols - 1);
        let y1 = (y0 + 1).min(rows - 1);
        let (ax, ay) = (gx - x0 as f64, gy - y0 as f64);
        let lut = |tx: usize, ty: usize| luts[ty * cols + tx][b] as f64;
        let top = (1.0 - ax) * lut(x0, y0) + ax * lut(x1, y0);
        let bot = (1.0 - ax) * lut(x0, y1) + ax * lut(x1, y1);
        ((1.0 - ay) * top + ay * bot).round() as u16
    })?;
    CapturedFrame::new(out, 8)
}
