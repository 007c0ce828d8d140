//! Byte-exact image interchange (PFM, PGM) and CSV tables.
//!
//! PFM (grayscale only):
//!
//! ```text
//! "Pf" \n  "<width> <height>" \n  "<scale>" \n  payload
//! ```
//!
//! The payload is `width * height` IEEE-754 `f32` samples, rows stored
//! bottom-to-top. A negative scale means little-endian samples. The writer
//! always emits `-1.0` (little-endian); the reader accepts either order.
//!
//! PGM (binary `P5`): `"P5\n<width> <height>\n<maxval>\n"` followed by the
//! samples top-to-bottom. `maxval` 255 stores one byte per sample, 65535
//! stores two bytes big-endian. Other maxvals are rejected. Masks are 8-bit
//! PGMs holding the exponent `k` of `mu = 2^-k` at each pixel.

use std::fs;
use std::path::Path;

use crate::hdr::HdrReconstruction;
use crate::optics::{CapturedFrame, ModulationMask};
use crate::scene::RadianceField;
use crate::{Error, Raster, Result};

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

/// Splits a netpbm-style header into `count` whitespace-separated tokens
/// (skipping `#` comments) and returns them with the payload offset. Exactly
/// one whitespace byte separates the last token from the payload.
fn header_tokens<'a>(
    bytes: &'a [u8],
    count: usize,
    format: &'static str,
) -> Result<(Vec<&'a str>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err(format, "header ended early"));
        }
        let tok = std::str::from_utf8(&bytes[start..i])
            .map_err(|_| format_err(format, "header is not ASCII"))?;
        tokens.push(tok);
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(format_err(format, "missing separator before payload"));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(tok: &str, format: &'static str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format_err(format, format!("bad dimension `{tok}`"))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pfm(image: &Raster<f32>) -> Result<Vec<u8>> {
    let (w, h) = image.dims();
    if let Some(i) = image.as_slice().iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidValue {
            x: i % w,
            y: i / w,
            reason: "PFM writer refuses NaN".into(),
        });
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for v in image.row(y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster<f32>> {
    let (tok, offset) = header_tokens(bytes, 4, "PFM")?;
    match tok[0] {
        "Pf" => {}
        "PF" => {
            return Err(Error::Unsupported {
                format: "PFM",
                reason: "color PFM (PF); only grayscale Pf is supported".into(),
            })
        }
        other => return Err(format_err("PFM", format!("bad magic `{other}`"))),
    }
    let w = parse_dim(tok[1], "PFM")?;
    let h = parse_dim(tok[2], "PFM")?;
    let scale: f32 = tok[3]
        .parse()
        .map_err(|_| format_err("PFM", format!("bad scale `{}`", tok[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM", "scale must be finite and nonzero"));
    }
    let little = scale < 0.0;
    let payload = &bytes[offset..];
    let need = w * h * 4;
    if payload.len() < need {
        return Err(format_err(
            "PFM",
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(format_err("PFM", "trailing bytes after payload"));
    }
    let mut data = vec![0f32; w * h];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (x, row_from_bottom) = (k % w, k / w);
        data[(h - 1 - row_from_bottom) * w + x] = v;
    }
    Raster::from_vec(w, h, data)
}

pub fn write_pfm(path: impl AsRef<Path>, image: &Raster<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(image)?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    decode_pfm(&read_file(path.as_ref())?)
}

/// Stores a radiance field as `f32` PFM.
pub fn write_radiance(path: impl AsRef<Path>, field: &RadianceField) -> Result<()> {
    write_pfm(path, &field.raster().map(|&v| v as f32))
}

pub fn read_radiance(path: impl AsRef<Path>) -> Result<RadianceField> {
    RadianceField::try_from(read_pfm(path)?)
}

/// Writes the estimate as PFM and its validity as an 8-bit PGM (255 valid,
/// 0 invalid) next to it.
pub fn write_reconstruction(
    pfm_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    recon: &HdrReconstruction,
) -> Result<()> {
    write_pfm(pfm_path, &recon.radiance().map(|&v| v as f32))?;
    let (w, h) = recon.dims();
    let valid = CapturedFrame::new(
        Raster::from_vec(
            w,
            h,
            recon
                .valid()
                .as_slice()
                .iter()
                .map(|&v| if v { 255 } else { 0 })
                .collect(),
        )?,
        8,
    )?;
    write_pgm(valid_path, &valid)
}

pub fn encode_pgm(frame: &CapturedFrame) -> Vec<u8> {
    let (w, h) = frame.dims();
    let maxval = frame.s_max();
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let data = frame.counts().as_slice();
    if frame.bit_depth() == 8 {
        out.extend(data.iter().map(|&c| c as u8));
    } else {
        out.reserve(data.len() * 2);
        for &c in data {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<CapturedFrame> {
    let (tok, offset) = header_tokens(bytes, 4, "PGM")?;
    if tok[0] != "P5" {
        return Err(if tok[0] == "P2" {
            Error::Unsupported {
                format: "PGM",
                reason: "ASCII P2; only binary P5 is supported".into(),
            }
        } else {
            format_err("PGM", format!("bad magic `{}`", tok[0]))
        });
    }
    let w = parse_dim(tok[1], "PGM")?;
    let h = parse_dim(tok[2], "PGM")?;
    let maxval: u32 = tok[3]
        .parse()
        .map_err(|_| format_err("PGM", format!("bad maxval `{}`", tok[3])))?;
    let (bytes_per, depth) = match maxval {
        255 => (1, 8),
        65535 => (2, 16),
        other => {
            return Err(Error::Unsupported {
                format: "PGM",
                reason: format!("maxval {other}; expected 255 or 65535"),
            })
        }
    };
    let payload = &bytes[offset..];
    let need = w * h * bytes_per;
    if payload.len() < need {
        return Err(format_err(
            "PGM",
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(format_err("PGM", "trailing bytes after payload"));
    }
    let data: Vec<u16> = if bytes_per == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    CapturedFrame::new(Raster::from_vec(w, h, data)?, depth)
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &CapturedFrame) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(frame))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<CapturedFrame> {
    decode_pgm(&read_file(path.as_ref())?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ModulationMask) -> Result<()> {
    let frame = CapturedFrame::new(mask.exponents().map(|&k| k as u16), 8)?;
    write_pgm(path, &frame)
}

/// Reads an exponent mask; values above `max_exponent` are an error.
pub fn read_mask(path: impl AsRef<Path>, max_exponent: u8) -> Result<ModulationMask> {
    let frame = read_pgm(path)?;
    if frame.bit_depth() != 8 {
        return Err(Error::Unsupported {
            format: "mask PGM",
            reason: "masks are stored as 8-bit PGM".into(),
        });
    }
    ModulationMask::from_exponents(frame.counts().map(|&c| c as u8), max_exponent)
}

/// Writes a header plus rows of preformatted cells.
pub fn write_csv<S: AsRef<str>>(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: &[Vec<S>],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = csv_bytes(header, rows)?;
    write_file(path, &bytes)
}

pub fn csv_bytes<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| format_err("CSV", e.to_string());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row.iter().map(|c| c.as_ref()))
            .map_err(to_err)?;
    }
    w.into_inner().map_err(|e| format_err("CSV", e.to_string()))
}

/// Fixed-precision float cell; NaN prints as `nan`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}
