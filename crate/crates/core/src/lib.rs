//! Simulator and measurement toolkit for DMD-modulated adaptive HDR imaging.
//!
//! The crate models the full chain from a synthetic radiance scene to a
//! measured strain field:
//!
//! 1. [`scene`] builds ground-truth radiance: speckle, warps and glare.
//! 2. [`optics`] simulates a sensor behind a per-pixel DMD attenuator, plus
//!    the SVE and CLAHE baselines.
//! 3. [`controller`] closes the loop, halving attenuation at saturated pixels
//!    until the frame is clean or the attenuation floor is reached.
//! 4. [`hdr`] inverts the modulation and does the dynamic-range bookkeeping.
//! 5. [`metrics`] and [`dic`] measure the result: no-reference image quality
//!    and subset digital image correlation with strain extraction.
//! 6. [`harness`] wires everything into reproducible experiments.
//!
//! Per-pixel and per-subset loops run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Results
//! are identical either way: every random stream is seeded per row.

pub mod config;
pub mod controller;
pub mod dic;
mod error;
pub mod harness;
pub mod hdr;
mod interp;
pub mod io;
pub mod metrics;
pub mod optics;
mod par;
pub mod raster;
pub mod scene;

pub use error::{Error, Result};
pub use raster::Raster;
