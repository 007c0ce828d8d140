//! Subset-based digital image correlation.
//!
//! Each grid point gets an integer-pixel start from an exhaustive ZNCC search,
//! then inverse-compositional Gauss-Newton refinement of a first-order
//! (affine) subset shape function on the ZNSSD criterion, sampling the
//! deformed image with bicubic interpolation. Strains come from local
//! least-squares planes fitted to the converged displacements.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::interp::bicubic;
use crate::optics::CapturedFrame;
use crate::{par, Error, Raster, Result};

/// Reference subsets with intensity variance below this are treated as flat.
const FLAT_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicConfig {
    /// Subset edge, pixels (odd).
    pub subset_size: usize,
    pub grid_step: usize,
    pub max_iterations: usize,
    /// Threshold on the shape-update norm, pixels at the subset edge.
    pub convergence_tol: f64,
    pub zncc_accept: f64,
    /// Strain fit window edge, grid points (odd).
    pub strain_window: usize,
    /// Half-width of the integer ZNCC search window, pixels.
    pub search_radius: usize,
    /// Distance from the frame edge to the outermost grid point. `None` uses
    /// `subset_size / 2 + search_radius`.
    pub border: Option<usize>,
}

impl Default for DicConfig {
    fn default() -> Self {
        Self {
            subset_size: 21,
            grid_step: 5,
            max_iterations: 50,
            convergence_tol: 1e-4,
            zncc_accept: 0.8,
            strain_window: 5,
            search_radius: 10,
            border: None,
        }
    }
}

impl DicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 11 || self.subset_size.is_multiple_of(2) {
            return Err(Error::param(
                "subset_size",
                format!("must be odd and >= 11, got {}", self.subset_size),
            ));
        }
        if self.grid_step == 0 {
            return Err(Error::param("grid_step", "must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be >= 1"));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return Err(Error::param("convergence_tol", "must be > 0"));
        }
        if !(self.zncc_accept > 0.0 && self.zncc_accept < 1.0) {
            return Err(Error::param(
                "zncc_accept",
                format!("must lie in (0, 1), got {}", self.zncc_accept),
            ));
        }
        if self.strain_window < 3 || self.strain_window.is_multiple_of(2) {
            return Err(Error::param(
                "strain_window",
                format!("must be odd and >= 3, got {}", self.strain_window),
            ));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.subset_size / 2
    }

    pub fn effective_border(&self) -> usize {
        // Two extra pixels for the gradient stencil.
        self.border
            .unwrap_or(self.half() + self.search_radius)
            .max(self.half() + 2)
    }

    /// Grid coordinates along an axis of length `len`.
    pub fn grid_axis(&self, len: usize) -> Vec<usize> {
        let b = self.effective_border();
        if len < 2 * b + 1 {
            return Vec::new();
        }
        (b..len - b).step_by(self.grid_step).collect()
    }
}

/// Displacements on the DIC grid. Rasters are indexed by grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
    pub u: Raster<f64>,
    pub v: Raster<f64>,
    pub zncc: Raster<f64>,
    pub converged: Raster<bool>,
    pub iterations: Raster<u32>,
}

impl DeformationField {
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.xs.len(), self.ys.len())
    }

    pub fn converged_count(&self) -> usize {
        self.converged.as_slice().iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResult {
    pub u: f64,
    pub v: f64,
    pub zncc: f64,
    pub converged: bool,
    pub iterations: u32,
}

impl PointResult {
    fn failed() -> Self {
        Self {
            u: f64::NAN,
            v: f64::NAN,
            zncc: 0.0,
            converged: false,
            iterations: 0,
        }
    }
}

/// Summed-area tables of values and squared values, `(w+1) x (h+1)`.
struct Integral {
    stride: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(img: &Raster<f64>) -> Self {
        let (w, h) = img.dims();
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let row = img.row(y);
            let (mut rs, mut rq) = (0.0, 0.0);
            for (x, &p) in row.iter().enumerate() {
                rs += p;
                rq += p * p;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + rs;
                sq[i] = sq[i - stride] + rq;
            }
        }
        Self { stride, sum, sq }
    }

    /// Sums over `[x0, x0+n) x [y0, y0+n)`.
    fn window(&self, x0: usize, y0: usize, n: usize) -> (f64, f64) {
        let s = self.stride;
        let (a, b, c, d) = (
            y0 * s + x0,
            y0 * s + x0 + n,
            (y0 + n) * s + x0,
            (y0 + n) * s + x0 + n,
        );
        (
            self.sum[d] - self.sum[b] - self.sum[c] + self.sum[a],
            self.sq[d] - self.sq[b] - self.sq[c] + self.sq[a],
        )
    }
}

struct Matcher<'a> {
    reference: &'a Raster<f64>,
    deformed: &'a Raster<f64>,
    integral: Integral,
    config: DicConfig,
    /// Subset offsets (dx, dy) in row-major order.
    offsets: Vec<(f64, f64)>,
}

impl<'a> Matcher<'a> {
    fn new(reference: &'a Raster<f64>, deformed: &'a Raster<f64>, config: DicConfig) -> Self {
        let m = config.half() as isize;
        let offsets = (-m..=m)
            .flat_map(|dy| (-m..=m).map(move |dx| (dx as f64, dy as f64)))
            .collect();
        Self {
            reference,
            deformed,
            integral: Integral::new(deformed),
            config,
            offsets,
        }
    }

    fn reference_subset(&self, x0: usize, y0: usize) -> Vec<f64> {
        let m = self.config.half();
        let n = self.config.subset_size;
        let mut out = Vec::with_capacity(n * n);
        for y in y0 - m..=y0 + m {
            out.extend_from_slice(&self.reference.row(y)[x0 - m..=x0 + m]);
        }
        out
    }

    /// Best integer offset by ZNCC over the search window.
    fn integer_search(&self, x0: usize, y0: usize, fz: &[f64], df: f64) -> Option<(isize, isize)> {
        let m = self.config.half() as isize;
        let n = self.config.subset_size;
        let r = self.config.search_radius as isize;
        let (w, h) = (
            self.deformed.width() as isize,
            self.deformed.height() as isize,
        );
        let npx = (n * n) as f64;
        let data = self.deformed.as_slice();
        let mut best: Option<(f64, isize, isize)> = None;
        for dv in -r..=r {
            let top = y0 as isize + dv - m;
            if top < 0 || top + n as isize > h {
                continue;
            }
            for du in -r..=r {
                let left = x0 as isize + du - m;
                if left < 0 || left + n as isize > w {
                    continue;
                }
                let (s, sq) = self.integral.window(left as usize, top as usize, n);
                let var = sq - s * s / npx;
                if var <= FLAT_VARIANCE * npx {
                    continue;
                }
                let mut dot = 0.0;
                for j in 0..n {
                    let start = (top as usize + j) * w as usize + left as usize;
                    let grow = &data[start..start + n];
                    let frow = &fz[j * n..(j + 1) * n];
                    dot += frow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                }
                let zncc = dot / (df * var.sqrt());
                if best.is_none_or(|(b, _, _)| zncc > b) {
                    best = Some((zncc, du, dv));
                }
            }
        }
        best.map(|(_, du, dv)| (du, dv))
    }

    fn gradient(&self, x: usize, y: usize) -> (f64, f64) {
        let img = self.reference;
        let (x, y) = (x as isize, y as isize);
        let g = |xx, yy| img.get_clamped(xx, yy);
        let fx = (g(x - 2, y) - 8.0 * g(x - 1, y) + 8.0 * g(x + 1, y) - g(x + 2, y)) / 12.0;
        let fy = (g(x, y - 2) - 8.0 * g(x, y - 1) + 8.0 * g(x, y + 1) - g(x, y + 2)) / 12.0;
        (fx, fy)
    }

    fn match_point(&self, x0: usize, y0: usize) -> PointResult {
        let f = self.reference_subset(x0, y0);
        let npx = f.len() as f64;
        let fm = f.iter().sum::<f64>() / npx;
        let fz: Vec<f64> = f.iter().map(|v| v - fm).collect();
        let ssf = fz.iter().map(|v| v * v).sum::<f64>();
        if ssf <= FLAT_VARIANCE * npx {
            return PointResult::failed();
        }
        let df = ssf.sqrt();

        let Some((du, dv)) = self.integer_search(x0, y0, &fz, df) else {
            return PointResult::failed();
        };

        // Steepest-descent images and the constant reference-side Hessian.
        let m = self.config.half() as isize;
        let mut sd: Vec<Vector6<f64>> = Vec::with_capacity(f.len());
        let mut hess = Matrix6::<f64>::zeros();
        for (i, &(dx, dy)) in self.offsets.iter().enumerate() {
            let px = (x0 as isize + (i as isize % (2 * m + 1)) - m) as usize;
            let py = (y0 as isize + (i as isize / (2 * m + 1)) - m) as usize;
            let (gx, gy) = self.gradient(px, py);
            let j = Vector6::new(gx, gx * dx, gx * dy, gy, gy * dx, gy * dy);
            hess += j * j.transpose();
            sd.push(j);
        }
        let Some(hinv) = hess.cholesky().map(|c| c.inverse()) else {
            return PointResult::failed();
        };

        // Warp as a 3x3 affine: [[1+ux, uy, u], [vx, 1+vy, v], [0, 0, 1]].
        let mut warp = Matrix3::new(1.0, 0.0, du as f64, 0.0, 1.0, dv as f64, 0.0, 0.0, 1.0);
        let mut g = vec![0.0; f.len()];
        let scale = m as f64;
        let mut iterations = 0u32;

        for _ in 0..self.config.max_iterations {
            iterations += 1;
            let Some((gm, dg)) = self.sample_warped(x0, y0, &warp, &mut g) else {
                return PointResult::failed();
            };
            let ratio = df / dg;
            let mut b = Vector6::<f64>::zeros();
            for ((j, &fzi), &gi) in sd.iter().zip(&fz).zip(&g) {
                b += j * (fzi - ratio * (gi - gm));
            }
            let dp = -(hinv * b);
            let delta = Matrix3::new(
                1.0 + dp[1],
                dp[2],
                dp[0],
                dp[4],
                1.0 + dp[5],
                dp[3],
                0.0,
                0.0,
                1.0,
            );
            let Some(delta_inv) = delta.try_inverse() else {
                return PointResult::failed();
            };
            warp *= delta_inv;
            let norm = (dp[0] * dp[0]
                + dp[3] * dp[3]
                + (dp[1] * scale).powi(2)
                + (dp[2] * scale).powi(2)
                + (dp[4] * scale).powi(2)
                + (dp[5] * scale).powi(2))
            .sqrt();
            if !norm.is_finite() {
                return PointResult::failed();
            }
            if norm < self.config.convergence_tol {
                break;
            }
        }

        let Some((gm, dg)) = self.sample_warped(x0, y0, &warp, &mut g) else {
            return PointResult::failed();
        };
        let znssd: f64 = fz
            .iter()
            .zip(&g)
            .map(|(&a, &b)| {
                let d = a / df - (b - gm) / dg;
                d * d
            })
            .sum();
        let zncc = (1.0 - znssd / 2.0).clamp(-1.0, 1.0);
        // Running out of iterations still counts when the match is good.
        PointResult {
            u: warp[(0, 2)],
            v: warp[(1, 2)],
            zncc,
            converged: zncc >= self.config.zncc_accept,
            iterations,
        }
    }

    /// Fills `g` with the deformed image under `warp`; returns mean and the
    /// root of the centered sum of squares.
    fn sample_warped(
        &self,
        x0: usize,
        y0: usize,
        warp: &Matrix3<f64>,
        g: &mut [f64],
    ) -> Option<(f64, f64)> {
        let (cx, cy) = (x0 as f64, y0 as f64);
        let (a, b, c) = (warp[(0, 0)], warp[(0, 1)], warp[(0, 2)]);
        let (d, e, f) = (warp[(1, 0)], warp[(1, 1)], warp[(1, 2)]);
        // A diverged warp whose center left the frame is a failed match.
        let (w, h) = self.deformed.dims();
        let (wx, wy) = (cx + c, cy + f);
        if !(wx >= 0.0 && wy >= 0.0 && wx < w as f64 && wy < h as f64) {
            return None;
        }
        let mut sum = 0.0;
        for (gi, &(dx, dy)) in g.iter_mut().zip(&self.offsets) {
            let x = cx + a * dx + b * dy + c;
            let y = cy + d * dx + e * dy + f;
            *gi = bicubic(self.deformed, x, y);
            sum += *gi;
        }
        let gm = sum / g.len() as f64;
        let ss: f64 = g.iter().map(|v| (v - gm) * (v - gm)).sum();
        // NaN samples also land here.
        if ss.is_nan() || ss <= FLAT_VARIANCE * g.len() as f64 {
            return None;
        }
        Some((gm, ss.sqrt()))
    }
}

/// Correlates `deformed` against `reference` on the configured grid.
pub fn dic_match(
    reference: &CapturedFrame,
    deformed: &CapturedFrame,
    config: &DicConfig,
) -> Result<DeformationField> {
    config.validate()?;
    deformed.counts().ensure_dims(reference.dims())?;
    let (w, h) = reference.dims();
    let xs = config.grid_axis(w);
    let ys = config.grid_axis(h);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Dimension {
            width: w,
            height: h,
            reason: "frame too small for any DIC grid point",
        });
    }
    let rf = reference.to_f64();
    let df = deformed.to_f64();
    let matcher = Matcher::new(&rf, &df, *config);
    let (nx, ny) = (xs.len(), ys.len());
    let results = par::map_range(nx * ny, |i| matcher.match_point(xs[i % nx], ys[i / nx]));

    let grid = |f: &dyn Fn(&PointResult) -> f64| -> Result<Raster<f64>> {
        Raster::from_vec(nx, ny, results.iter().map(f).collect())
    };
    Ok(DeformationField {
        u: grid(&|r| r.u)?,
        v: grid(&|r| r.v)?,
        zncc: grid(&|r| r.zncc)?,
        converged: Raster::from_vec(nx, ny, results.iter().map(|r| r.converged).collect())?,
        iterations: Raster::from_vec(nx, ny, results.iter().map(|r| r.iterations).collect())?,
        xs,
        ys,
    })
}

/// Percentage of converged grid points.
pub fn effective_area(field: &DeformationField) -> f64 {
    100.0 * field.converged_count() as f64 / field.converged.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    pub exx: Raster<f64>,
    pub eyy: Raster<f64>,
    pub exy: Raster<f64>,
    pub e1: Raster<f64>,
    pub e2: Raster<f64>,
    pub defined: Raster<bool>,
}

impl StrainField {
    pub fn defined_count(&self) -> usize {
        self.defined.as_slice().iter().filter(|&&d| d).count()
    }
}

/// Major and minor principal strains of a 2D infinitesimal strain tensor.
pub fn principal(exx: f64, eyy: f64, exy: f64) -> (f64, f64) {
    let mean = 0.5 * (exx + eyy);
    let r = (0.25 * (exx - eyy) * (exx - eyy) + exy * exy).sqrt();
    (mean + r, mean - r)
}

/// Least-squares plane fits of `u` and `v` over each point's window of
/// converged neighbors. Points with fewer than six samples are undefined
/// (NaN).
pub fn strain(field: &DeformationField, config: &DicConfig) -> Result<StrainField> {
    config.validate()?;
    let (nx, ny) = field.grid_dims();
    let hw = (config.strain_window / 2) as isize;

    let fit = |i: usize| -> Option<(f64, f64, f64)> {
        let (gx, gy) = ((i % nx) as isize, (i / nx) as isize);
        let (cx, cy) = (field.xs[gx as usize] as f64, field.ys[gy as usize] as f64);
        let mut ata = Matrix3::<f64>::zeros();
        let mut atu = Vector3::<f64>::zeros();
        let mut atv = Vector3::<f64>::zeros();
        let mut n = 0;
        for jy in (gy - hw).max(0)..=(gy + hw).min(ny as isize - 1) {
            for jx in (gx - hw).max(0)..=(gx + hw).min(nx as isize - 1) {
                let (jx, jy) = (jx as usize, jy as usize);
                if !field.converged.get(jx, jy) {
                    continue;
                }
                let row = Vector3::new(1.0, field.xs[jx] as f64 - cx, field.ys[jy] as f64 - cy);
                ata += row * row.transpose();
                atu += row * *field.u.get(jx, jy);
                atv += row * *field.v.get(jx, jy);
                n += 1;
            }
        }
        if n < 6 {
            return None;
        }
        let chol = ata.cholesky()?;
        let cu = chol.solve(&atu);
        let cv = chol.solve(&atv);
        let exx = cu[1];
        let eyy = cv[2];
        let exy = 0.5 * (cu[2] + cv[1]);
        Some((exx, eyy, exy))
    };

    let fits = par::map_range(nx * ny, fit);
    let pick = |f: &dyn Fn(f64, f64, f64) -> f64| -> Result<Raster<f64>> {
        Raster::from_vec(
            nx,
            ny,
            fits.iter()
                .map(|r| r.map_or(f64::NAN, |(a, b, c)| f(a, b, c)))
                .collect(),
        )
    };
    Ok(StrainField {
        exx: pick(&|a, _, _| a)?,
        eyy: pick(&|_, b, _| b)?,
        exy: pick(&|_, _, c| c)?,
        e1: pick(&|a, b, c| principal(a, b, c).0)?,
        e2: pick(&|a, b, c| principal(a, b, c).1)?,
        defined: Raster::from_vec(nx, ny, fits.iter().map(|r| r.is_some()).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_field(f: impl Fn(f64, f64) -> (f64, f64)) -> DeformationField {
        let xs: Vec<usize> = (0..9).map(|i| 20 + 5 * i).collect();
        let ys: Vec<usize> = (0..7).map(|i| 30 + 5 * i).collect();
        let (nx, ny) = (xs.len(), ys.len());
        let uv: Vec<(f64, f64)> = (0..nx * ny)
            .map(|i| f(xs[i % nx] as f64, ys[i / nx] as f64))
            .collect();
        DeformationField {
            u: Raster::from_vec(nx, ny, uv.iter().map(|p| p.0).collect()).unwrap(),
            v: Raster::from_vec(nx, ny, uv.iter().map(|p| p.1).collect()).unwrap(),
            zncc: Raster::filled(nx, ny, 1.0).unwrap(),
            converged: Raster::filled(nx, ny, true).unwrap(),
            iterations: Raster::filled(nx, ny, 1).unwrap(),
            xs,
            ys,
        }
    }

    #[test]
    fn config_validation() {
        assert!(DicConfig::default().validate().is_ok());
        let bad = DicConfig {
            subset_size: 20,
            ..DicConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DicConfig {
            subset_size: 9,
            ..DicConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DicConfig {
            zncc_accept: 1.0,
            ..DicConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_field_has_zero_strain() {
        let s = strain(&synthetic_field(|_, _| (0.0, 0.0)), &DicConfig::default()).unwrap();
        for r in [&s.exx, &s.eyy, &s.exy, &s.e1, &s.e2] {
            assert!(r.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uniaxial_and_shear() {
        let cfg = DicConfig::default();
        let s = strain(&synthetic_field(|x, _| (0.01 * x, 0.0)), &cfg).unwrap();
        for i in 0..s.e1.len() {
            assert!((s.exx.as_slice()[i] - 0.01).abs() < 1e-10);
            assert!((s.e1.as_slice()[i] - 0.01).abs() < 1e-10);
            assert!(s.e2.as_slice()[i].abs() < 1e-10);
        }
        let s = strain(&synthetic_field(|x, y| (0.005 * y, 0.005 * x)), &cfg).unwrap();
        for i in 0..s.e1.len() {
            assert!((s.exy.as_slice()[i] - 0.005).abs() < 1e-10);
            assert!((s.e1.as_slice()[i] - 0.005).abs() < 1e-10);
            assert!((s.e2.as_slice()[i] + 0.005).abs() < 1e-10);
        }
    }

    #[test]
    fn sparse_neighborhoods_are_undefined() {
        let mut f = synthetic_field(|_, _| (0.0, 0.0));
        for c in f.converged.as_mut_slice() {
            *c = false;
        }
        *f.converged.get_mut(4, 3) = true;
        let s = strain(&f, &DicConfig::default()).unwrap();
        assert_eq!(s.defined_count(), 0);
        assert!(s.e1.as_slice().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn effective_area_counts_converged() {
        let mut f = synthetic_field(|_, _| (0.0, 0.0));
        assert_eq!(effective_area(&f), 100.0);
        for gx in 0..9 {
            for gy in 0..3 {
                *f.converged.get_mut(gx, gy) = false;
            }
        }
        assert!((effective_area(&f) - 100.0 * 36.0 / 63.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_frames_error() {
        let a = CapturedFrame::from_u8(64, 64, &[0; 64 * 64]).unwrap();
        let b = CapturedFrame::from_u8(64, 60, &[0; 64 * 60]).unwrap();
        assert!(dic_match(&a, &b, &DicConfig::default()).is_err());
        let tiny = CapturedFrame::from_u8(20, 20, &[0; 400]).unwrap();
        assert!(dic_match(&tiny, &tiny, &DicConfig::default()).is_err());
    }

    #[test]
    fn flat_reference_never_converges() {
        let a = CapturedFrame::from_u8(64, 64, &[255; 64 * 64]).unwrap();
        let f = dic_match(&a, &a, &DicConfig::default()).unwrap();
        assert_eq!(f.converged_count(), 0);
        assert!(f.u.as_slice().iter().all(|v| v.is_nan()));
    }
}
