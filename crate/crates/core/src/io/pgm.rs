//! 8-bit binary PGM (`P5`) images, normalized to `[0, 1]` on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Intensity of an 8-bit level. Levels are rounded through `f32` so that
/// loaded pixels are exactly representable at storage precision.
pub fn level_to_unit(level: u8) -> f64 {
    (level as f32 / 255.0) as f64
}

pub fn unit_to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snap every pixel to the nearest 8-bit level.
pub fn quantize(img: &Tensor) -> Tensor {
    img.map(|v| level_to_unit(unit_to_level(v)))
}

pub fn encode(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = img.dims2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| unit_to_level(v)));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit (maxval 255) images are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = bytes.get(i + 1..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() < w * h {
        return Err(bad("truncated raster"));
    }
    Tensor::from_vec(&[h, w], raster[..w * h].iter().map(|&b| level_to_unit(b)).collect())
}

pub fn save(path: &Path, img: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(img)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    decode(&super::read_file(path)?)
}

/// Luminance of an interleaved RGB image `(h, w, 3)`.
pub fn luminance(rgb: &Tensor) -> Result<Tensor> {
    let (h, w, c) = rgb.dims3()?;
    if c != 3 {
        return Err(Error::InvalidShape(format!("expected 3 channels, got {c}")));
    }
    let data = rgb
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Tensor::from_vec(&[h, w], data)
}
