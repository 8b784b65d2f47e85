//! Image quality metrics and endpoint detection.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Tensor;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a.sub(b)?.sum_sq() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 8;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights, population
/// statistics, dynamic range 1).
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w) = a.dims2()?;
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(arg_err!("{h}x{w} image is smaller than the {k}x{k} SSIM window"));
    }
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = (k * k) as f64;
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in i..i + k {
                for c in j..j + k {
                    let (u, v) = (x[r * w + c], y[r * w + c]);
                    sx += u;
                    sy += v;
                    sxx += u * u;
                    syy += v * v;
                    sxy += u * v;
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cov = sxy / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

/// `psnr_t / psnr_full`, both already capped.
pub fn psnr_ratio(psnr_t: f64, psnr_full: f64) -> Result<f64> {
    if !(psnr_full > 0.0) {
        return Err(arg_err!("reference PSNR must be positive, got {psnr_full}"));
    }
    Ok(psnr_t.min(PSNR_CAP) / psnr_full.min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub t: usize,
    /// False when no grid point exceeded the threshold and `t` fell back to
    /// the last grid value.
    pub crossed: bool,
}

/// First grid value whose ratio is strictly above `threshold`.
pub fn detect_endpoint(ratios: &[f64], grid: &[usize], threshold: f64) -> Result<Endpoint> {
    if ratios.is_empty() || ratios.len() != grid.len() {
        return Err(arg_err!("{} ratios for {} grid points", ratios.len(), grid.len()));
    }
    if grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(arg_err!("endpoint grid must be strictly increasing"));
    }
    Ok(match ratios.iter().position(|&r| r > threshold) {
        Some(i) => Endpoint {
            t: grid[i],
            crossed: true,
        },
        None => Endpoint {
            t: *grid.last().unwrap(),
            crossed: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let a = Tensor::full(&[4, 4], 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&Tensor::zeros(&[3, 3]), &Tensor::full(&[3, 3], 1.0)).unwrap(), 0.0);
        assert!(psnr(&a, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = Tensor::full(&[8, 8], 0.5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        // constant patches: only the luminance term survives
        let lo = Tensor::full(&[10, 9], 0.25);
        let hi = Tensor::full(&[10, 9], 0.75);
        let c1 = 1e-4;
        let expect = (2.0 * 0.25 * 0.75 + c1) / (0.0625 + 0.5625 + c1);
        assert!((ssim(&lo, &hi).unwrap() - expect).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[7, 9]), &Tensor::zeros(&[7, 9])).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert!((psnr_ratio(24.9, 25.65).unwrap() - 0.9708).abs() < 5e-5);
        assert!((psnr_ratio(33.7, 34.36).unwrap() - 0.9808).abs() < 5e-5);
        assert_eq!(psnr_ratio(31.0, 31.0).unwrap(), 1.0);
        assert!(psnr_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn endpoint_examples() {
        let grid = [5, 10, 15, 20, 25];
        let e = detect_endpoint(&[0.5, 0.7, 0.88, 0.92, 0.95], &grid, 0.9).unwrap();
        assert_eq!(e, Endpoint { t: 20, crossed: true });
        assert_eq!(detect_endpoint(&[1.0; 5], &grid, 0.9).unwrap().t, 5);
        let none = detect_endpoint(&[0.5; 5], &grid, 0.9).unwrap();
        assert_eq!(none, Endpoint { t: 25, crossed: false });
        assert_eq!(detect_endpoint(&[0.89, 0.91], &[25, 30], 0.9).unwrap().t, 30);
        assert_eq!(detect_endpoint(&[0.9, 0.91], &[25, 30], 0.9).unwrap().t, 30);
        assert!(detect_endpoint(&[], &[], 0.9).is_err());
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..200) {
            let mut rng = crate::numerics::Rng::new(seed);
            let a = Tensor::from_vec(&[9, 10], (0..90).map(|_| rng.uniform()).collect()).unwrap();
            let b = Tensor::from_vec(&[9, 10], (0..90).map(|_| rng.uniform()).collect()).unwrap();
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
