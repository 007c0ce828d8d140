//! Synthetic ground-truth radiance: speckle patterns, warps and glare.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::interp::bicubic;
use crate::{Error, Raster, Result};

/// Identifier of the speckle-position generator, recorded in run manifests.
///
/// Positions come from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha 0.9),
/// drawing `x = u * width` then `y = u * height` per speckle, where `u` is the
/// standard `f64` uniform on `[0, 1)`.
pub const SPECKLE_PRNG: &str = "chacha8-seed_from_u64/f64-uniform-xy";

/// Smallest raster edge accepted by [`RadianceField`].
pub const MIN_FIELD_DIM: usize = 16;

/// Blob tails beyond this many sigmas are dropped (relative weight < 2e-8).
const BLOB_CUTOFF_SIGMAS: f64 = 6.0;

/// Linear scene radiance. Values are finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField(Raster<f64>);

impl RadianceField {
    pub fn new(raster: Raster<f64>) -> Result<Self> {
        let (width, height) = raster.dims();
        if width < MIN_FIELD_DIM || height < MIN_FIELD_DIM {
            return Err(Error::Dimension {
                width,
                height,
                reason: "radiance fields must be at least 16x16",
            });
        }
        for (i, &v) in raster.as_slice().iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidValue {
                    x: i % width,
                    y: i / width,
                    reason: format!("radiance must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(Self(raster))
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(width, height, value)?)
    }

    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        Self::new(Raster::from_fn(width, height, f)?)
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.0
    }

    pub fn into_raster(self) -> Raster<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.0.get(x, y)
    }

    pub fn max(&self) -> f64 {
        self.0.as_slice().iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.0.as_slice().iter().sum::<f64>() / self.0.len() as f64
    }

    /// Multiplies every sample by `factor` (must be finite and >= 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(Error::param(
                "factor",
                format!("{factor} is not a valid gain"),
            ));
        }
        Ok(Self(self.0.map(|v| v * factor)))
    }
}

impl TryFrom<Raster<f32>> for RadianceField {
    type Error = Error;

    fn try_from(r: Raster<f32>) -> Result<Self> {
        Self::new(r.map(|&v| v as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Gaussian sigma of each speckle, pixels.
    pub radius: f64,
    pub base: f64,
    pub peak: f64,
}

impl Default for SpeckleParams {
    fn default() -> Self {
        Self {
            seed: 1,
            width: 256,
            height: 256,
            count: 500,
            radius: 2.0,
            base: 10.0,
            peak: 100.0,
        }
    }
}

/// Speckle centers in draw order.
pub fn speckle_centers(params: &SpeckleParams) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.count)
        .map(|_| {
            let x = rng.random::<f64>() * params.width as f64;
            let y = rng.random::<f64>() * params.height as f64;
            (x, y)
        })
        .collect()
}

/// Sum-of-Gaussians speckle on a constant base.
pub fn gen_speckle(params: &SpeckleParams) -> Result<RadianceField> {
    let SpeckleParams {
        width,
        height,
        radius,
        base,
        peak,
        ..
    } = *params;
    if width == 0 || height == 0 {
        return Err(Error::Dimension {
            width,
            height,
            reason: "speckle field must be non-empty",
        });
    }
    if !(base >= 0.0 && peak > base && peak.is_finite()) {
        return Err(Error::param(
            "peak",
            format!("need peak > base >= 0, got base={base} peak={peak}"),
        ));
    }
    if !(radius >= 1.0 && radius.is_finite()) {
        return Err(Error::param(
            "radius",
            format!("must be >= 1, got {radius}"),
        ));
    }

    let centers = speckle_centers(params);
    let inv_two_var = 1.0 / (2.0 * radius * radius);
    let reach = BLOB_CUTOFF_SIGMAS * radius;
    let field = Raster::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64, y as f64);
        let mut v = base;
        for &(cx, cy) in &centers {
            let dy = py - cy;
            let dx = px - cx;
            if dy.abs() > reach || dx.abs() > reach {
                continue;
            }
            v += peak * (-(dx * dx + dy * dy) * inv_two_var).exp();
        }
        v
    })?;
    RadianceField::new(field)
}

/// Deformation applied by [`warp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeformationSpec {
    Identity,
    /// Rigid displacement: content moves by `(u, v)` pixels.
    Translation {
        u: f64,
        v: f64,
    },
    /// Output-to-input map: `src = M * [x, y, 1]`.
    Affine {
        matrix: [[f64; 3]; 2],
    },
}

impl DeformationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DeformationSpec::Identity => Ok(()),
            DeformationSpec::Translation { u, v } => {
                if u.is_finite() && v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("translation", "must be finite"))
                }
            }
            DeformationSpec::Affine { matrix: m } => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if m.iter().flatten().all(|v| v.is_finite()) && det > 0.0 {
                    Ok(())
                } else {
                    Err(Error::param(
                        "affine",
                        format!("linear part must be finite with positive determinant, det={det}"),
                    ))
                }
            }
        }
    }

    /// Input-domain coordinate sampled for output pixel `(x, y)`.
    #[inline]
    pub fn source_of(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            DeformationSpec::Identity => (x, y),
            DeformationSpec::Translation { u, v } => (x - u, y - v),
            DeformationSpec::Affine { matrix: m } => (
                m[0][0] * x + m[0][1] * y + m[0][2],
                m[1][0] * x + m[1][1] * y + m[1][2],
            ),
        }
    }
}

/// Resamples `field` through `deformation` with bicubic interpolation and
/// clamp-to-edge borders.
pub fn warp(field: &RadianceField, deformation: &DeformationSpec) -> Result<RadianceField> {
    deformation.validate()?;
    if matches!(deformation, DeformationSpec::Identity) {
        return Ok(field.clone());
    }
    let src = field.raster();
    let out = Raster::from_fn(field.width(), field.height(), |x, y| {
        let (sx, sy) = deformation.source_of(x as f64, y as f64);
        // Keys kernel can undershoot near sharp edges.
        bicubic(src, sx, sy).max(0.0)
    })?;
    RadianceField::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlareKind {
    None,
    LocalSpot,
    GlobalLow,
    GlobalHigh,
}

impl GlareKind {
    pub const ALL: [GlareKind; 4] = [
        GlareKind::None,
        GlareKind::LocalSpot,
        GlareKind::GlobalLow,
        GlareKind::GlobalHigh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GlareKind::None => "none",
            GlareKind::LocalSpot => "local",
            GlareKind::GlobalLow => "global-low",
            GlareKind::GlobalHigh => "global-high",
        }
    }
}

impl std::str::FromStr for GlareKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GlareKind::None),
            "local" | "local-spot" => Ok(GlareKind::LocalSpot),
            "global-low" => Ok(GlareKind::GlobalLow),
            "global-high" => Ok(GlareKind::GlobalHigh),
            other => Err(Error::param(
                "glare",
                format!("unknown preset `{other}` (expected none|local|global-low|global-high)"),
            )),
        }
    }
}

impl std::fmt::Display for GlareKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlareSpec {
    None,
    /// Additive Gaussian spot (laser-like highlight).
    LocalSpot {
        center: (f64, f64),
        sigma: f64,
        amplitude: f64,
    },
    GlobalLow {
        gain: f64,
    },
    GlobalHigh {
        gain: f64,
    },
}

/// Free parameters of the named glare presets. Radiometric ratios are not
/// known for the physical scenes, so these are plain knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlarePresets {
    /// Peak radiance added at the spot center.
    pub spot_amplitude: f64,
    /// Spot sigma as a fraction of the shorter field edge.
    pub spot_sigma_frac: f64,
    pub global_low_gain: f64,
    pub global_high_gain: f64,
}

impl Default for GlarePresets {
    fn default() -> Self {
        Self {
            spot_amplitude: 1.0e4,
            spot_sigma_frac: 0.18,
            global_low_gain: 12.0,
            global_high_gain: 40.0,
        }
    }
}

impl GlareSpec {
    /// Builds a named preset for `field`; the spot sits at the field center.
    pub fn preset(kind: GlareKind, field: &RadianceField, presets: &GlarePresets) -> Self {
        match kind {
            GlareKind::None => GlareSpec::None,
            GlareKind::LocalSpot => {
                let (w, h) = field.dims();
                GlareSpec::LocalSpot {
                    center: (w as f64 / 2.0, h as f64 / 2.0),
                    sigma: presets.spot_sigma_frac * w.min(h) as f64,
                    amplitude: presets.spot_amplitude,
                }
            }
            GlareKind::GlobalLow => GlareSpec::GlobalLow {
                gain: presets.global_low_gain,
            },
            GlareKind::GlobalHigh => GlareSpec::GlobalHigh {
                gain: presets.global_high_gain,
            },
        }
    }

    pub fn kind(&self) -> GlareKind {
        match self {
            GlareSpec::None => GlareKind::None,
            GlareSpec::LocalSpot { .. } => GlareKind::LocalSpot,
            GlareSpec::GlobalLow { .. } => GlareKind::GlobalLow,
            GlareSpec::GlobalHigh { .. } => GlareKind::GlobalHigh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GlareSpec::None => Ok(()),
            GlareSpec::LocalSpot {
                sigma, amplitude, ..
            } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
                }
                if !(amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(Error::param(
                        "amplitude",
                        format!("must be >= 0, got {amplitude}"),
                    ));
                }
                Ok(())
            }
            GlareSpec::GlobalLow { gain } | GlareSpec::GlobalHigh { gain } => {
                if gain >= 1.0 && gain.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param(
                        "global_gain",
                        format!("must be >= 1, got {gain}"),
                    ))
                }
            }
        }
    }
}

/// Applies glare. Never decreases any sample.
pub fn add_glare(field: &RadianceField, glare: &GlareSpec) -> Result<RadianceField> {
    glare.validate()?;
    let src = field.raster();
    match *glare {
        GlareSpec::None => Ok(field.clone()),
        GlareSpec::LocalSpot {
            center: (cx, cy),
            sigma,
            amplitude,
        } => {
            let (w, h) = field.dims();
            if !(cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64) {
                return Err(Error::param(
                    "center",
                    format!("({cx}, {cy}) lies outside the {w}x{h} field"),
                ));
            }
            let inv = 1.0 / (2.0 * sigma * sigma);
            let out = Raster::from_fn(w, h, |x, y| {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                src.get(x, y) + amplitude * (-(dx * dx + dy * dy) * inv).exp()
            })?;
            RadianceField::new(out)
        }
        GlareSpec::GlobalLow { gain } | GlareSpec::GlobalHigh { gain } => field.scaled(gain),
    }
}

/// Multiplicative illumination hotspot: irradiance `1 + (peak_gain - 1) *
/// exp(-r^2 / 2 sigma^2)` scales the reflectance pattern. Models a specular
/// highlight on a speckled specimen, where the texture survives inside the
/// glare instead of being washed out by an additive offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hotspot {
    pub center: (f64, f64),
    pub sigma: f64,
    pub peak_gain: f64,
}

pub fn illuminate(field: &RadianceField, hotspot: &Hotspot) -> Result<RadianceField> {
    let Hotspot {
        center: (cx, cy),
        sigma,
        peak_gain,
    } = *hotspot;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
    }
    if !(peak_gain >= 1.0 && peak_gain.is_finite()) {
        return Err(Error::param(
            "peak_gain",
            format!("must be >= 1, got {peak_gain}"),
        ));
    }
    let src = field.raster();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let out = Raster::from_fn(field.width(), field.height(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        src.get(x, y) * (1.0 + (peak_gain - 1.0) * (-(dx * dx + dy * dy) * inv).exp())
    })?;
    RadianceField::new(out)
}
