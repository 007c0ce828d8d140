//! Bicubic convolution (Keys, a = -0.5) with clamp-to-edge borders.

use crate::Raster;

const A: f64 = -0.5;

#[inline]
pub(crate) fn keys_weights(t: f64) -> [f64; 4] {
    // Offsets -1, 0, 1, 2 relative to floor(x); t in [0, 1).
    let w = |d: f64| {
        let d = d.abs();
        if d <= 1.0 {
            ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
        } else if d < 2.0 {
            ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A
        } else {
            0.0
        }
    };
    [w(t + 1.0), w(t), w(1.0 - t), w(2.0 - t)]
}

/// Samples `img` at real coordinates `(x, y)`.
#[inline]
pub(crate) fn bicubic(img: &Raster<f64>, x: f64, y: f64) -> f64 {
    if x.is_nan() || y.is_nan() {
        return f64::NAN;
    }
    // Past two pixels outside, every tap clamps to the edge anyway.
    let x = x.clamp(-2.0, img.width() as f64 + 1.0);
    let y = y.clamp(-2.0, img.height() as f64 + 1.0);
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = keys_weights(x - x0);
    let wy = keys_weights(y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let data = img.as_slice();

    if xi >= 1 && yi >= 1 && xi + 2 < w && yi + 2 < h {
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            let base = ((yi - 1 + j as isize) * w + xi - 1) as usize;
            let row = &data[base..base + 4];
            acc += wyj * (wx[0] * row[0] + wx[1] * row[1] + wx[2] * row[2] + wx[3] * row[3]);
        }
        return acc;
    }

    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let mut r = 0.0;
        for (i, wxi) in wx.iter().enumerate() {
            r += wxi * img.get_clamped(xi - 1 + i as isize, yi - 1 + j as isize);
        }
        acc += wyj * r;
    }
    acc
}
