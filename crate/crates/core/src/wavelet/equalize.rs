use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Tensor;

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EqualizeConfig {
    /// Tile edge in pixels.
    pub tile: usize,
    /// Clip limit as a multiple of the mean bin height; `inf` disables
    /// clipping.
    pub clip: f64,
}

impl Default for EqualizeConfig {
    fn default() -> Self {
        Self { tile: 8, clip: 2.0 }
    }
}

/// Per-tile lookup table from a clipped histogram, or `None` when the
/// histogram is degenerate (every pixel in one bin, nothing redistributed).
fn tile_lut(values: &[f64], clip: f64) -> Option<[f64; BINS]> {
    let mut hist = [0.0f64; BINS];
    for &v in values {
        hist[bin(v)] += 1.0;
    }
    let total = values.len() as f64;
    if clip.is_finite() {
        let limit = (clip * total / BINS as f64).max(1.0);
        let mut excess = 0.0;
        for h in hist.iter_mut() {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let share = excess / BINS as f64;
        hist.iter_mut().for_each(|h| *h += share);
    }
    let mut cdf = [0.0; BINS];
    let mut acc = 0.0;
    for (c, h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf[hist.iter().position(|&h| h > 0.0)?];
    let span = acc - cdf_min;
    if span <= 1e-12 * acc {
        return None;
    }
    Some(cdf.map(|c| ((c - cdf_min) / span).clamp(0.0, 1.0)))
}

fn bin(v: f64) -> usize {
    ((v * BINS as f64) as usize).min(BINS - 1)
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is cut into `tile x tile` regions (padded by reflection when the
/// tile does not divide the image). Each region gets a clipped-histogram CDF
/// mapping `(cdf - cdf_min) / (n - cdf_min)`; pixels blend the mappings of
/// the four nearest tile centres bilinearly.
pub fn adaptive_hist_eq(image: &Tensor, tile: usize, clip: f64) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    if tile == 0 || tile > h || tile > w {
        return Err(arg_err!("tile {tile} does not fit a {h}x{w} image"));
    }
    if !(clip > 0.0) {
        return Err(arg_err!("clip limit must be positive, got {clip}"));
    }
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(arg_err!("equalization input must lie in [0, 1]"));
    }
    let (ny, nx) = (h.div_ceil(tile), w.div_ceil(tile));
    let px = image.data();
    let mut luts = Vec::with_capacity(ny * nx);
    let mut buf = Vec::with_capacity(tile * tile);
    for ty in 0..ny {
        for tx in 0..nx {
            buf.clear();
            for y in ty * tile..(ty + 1) * tile {
                for x in tx * tile..(tx + 1) * tile {
                    buf.push(px[reflect(y, h) * w + reflect(x, w)]);
                }
            }
            luts.push(tile_lut(&buf, clip));
        }
    }
    let map = |ty: usize, tx: usize, v: f64| match &luts[ty * nx + tx] {
        Some(lut) => lut[bin(v)],
        None => v,
    };
    let axis = |p: usize, n: usize| {
        let f = (p as f64 + 0.5) / tile as f64 - 0.5;
        let i0 = f.floor().clamp(0.0, (n - 1) as f64) as usize;
        let i1 = (i0 + 1).min(n - 1);
        let t = if i1 == i0 { 0.0 } else { (f - i0 as f64).clamp(0.0, 1.0) };
        (i0, i1, t)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1, fy) = axis(y, ny);
        for x in 0..w {
            let (x0, x1, fx) = axis(x, nx);
            let v = px[y * w + x];
            let top = (1.0 - fx) * map(y0, x0, v) + fx * map(y0, x1, v);
            let bot = (1.0 - fx) * map(y1, x0, v) + fx * map(y1, x1, v);
            out[y * w + x] = ((1.0 - fy) * top + fy * bot).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(&[h, w], out)
}
