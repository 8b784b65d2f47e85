//! Single-level orthonormal Haar analysis of luminance images.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2     LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2     HH = (a - b - c + d) / 2
//! ```
//!
//! The transform is orthonormal, so subband energies add up to the image
//! energy exactly (up to rounding).

mod equalize;

pub use equalize::{adaptive_hist_eq, EqualizeConfig};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl Subbands {
    fn check(&self) -> Result<(usize, usize)> {
        let dims = self.ll.dims2()?;
        for b in [&self.lh, &self.hl, &self.hh] {
            self.ll.same_shape(b)?;
        }
        Ok(dims)
    }

    pub fn scale(&self, s: f64) -> Subbands {
        Subbands {
            ll: self.ll.scale(s),
            lh: self.lh.scale(s),
            hl: self.hl.scale(s),
            hh: self.hh.scale(s),
        }
    }

    pub fn total_energy(&self) -> f64 {
        energy(&self.ll) + energy(&self.lh) + energy(&self.hl) + energy(&self.hh)
    }
}

pub fn haar_dwt(image: &Tensor) -> Result<Subbands> {
    let (h, w) = image.dims2()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("Haar DWT needs even extents, got {h}x{w}"));
    }
    let (h2, w2) = (h / 2, w / 2);
    let px = image.data();
    let mut bands = [
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
    ];
    for i in 0..h2 {
        for j in 0..w2 {
            let a = px[2 * i * w + 2 * j];
            let b = px[2 * i * w + 2 * j + 1];
            let c = px[(2 * i + 1) * w + 2 * j];
            let d = px[(2 * i + 1) * w + 2 * j + 1];
            let k = i * w2 + j;
            bands[0][k] = (a + b + c + d) / 2.0;
            bands[1][k] = (a - b + c - d) / 2.0;
            bands[2][k] = (a + b - c - d) / 2.0;
            bands[3][k] = (a - b - c + d) / 2.0;
        }
    }
    let [ll, lh, hl, hh] = bands.map(|d| Tensor::from_vec(&[h2, w2], d).unwrap());
    Ok(Subbands { ll, lh, hl, hh })
}

pub fn haar_idwt(bands: &Subbands) -> Result<Tensor> {
    let (h2, w2) = bands.check()?;
    let w = 2 * w2;
    let mut out = vec![0.0; 4 * h2 * w2];
    for i in 0..h2 {
        for j in 0..w2 {
            let k = i * w2 + j;
            let (ll, lh, hl, hh) = (
                bands.ll.data()[k],
                bands.lh.data()[k],
                bands.hl.data()[k],
                bands.hh.data()[k],
            );
            out[2 * i * w + 2 * j] = (ll + lh + hl + hh) / 2.0;
            out[2 * i * w + 2 * j + 1] = (ll - lh + hl - hh) / 2.0;
            out[(2 * i + 1) * w + 2 * j] = (ll + lh - hl - hh) / 2.0;
            out[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
    Tensor::from_vec(&[2 * h2, w], out)
}

/// Elementwise mean of the three detail subbands.
pub fn subband_sum(bands: &Subbands) -> Result<Tensor> {
    bands.check()?;
    let data = bands
        .lh
        .data()
        .iter()
        .zip(bands.hl.data())
        .zip(bands.hh.data())
        .map(|((a, b), c)| (a + b + c) / 3.0)
        .collect();
    Tensor::from_vec(bands.ll.shape(), data)
}

/// Sum of squared entries.
pub fn energy(x: &Tensor) -> f64 {
    x.sum_sq()
}

/// Wavelet signature of one luminance image.
#[derive(Clone, Debug)]
pub struct FrequencyProfile {
    pub subbands: Subbands,
    /// Raw detail average; drives `energy_sum`.
    pub x_sum: Tensor,
    /// Min-max normalized and adaptively equalized `x_sum`; the estimator's
    /// input.
    pub x_sum_equalized: Tensor,
    pub energy_ll: f64,
    pub energy_sum: f64,
    /// Energy of `x_sum_equalized`, kept for comparison only.
    pub energy_sum_equalized: f64,
}

/// JSON record of a profile, optionally tagged with an endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub energy_ll: f64,
    pub energy_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_sum_equalized: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<usize>,
}

impl FrequencyProfile {
    pub fn record(&self, endpoint: Option<usize>) -> ProfileRecord {
        ProfileRecord {
            energy_ll: self.energy_ll,
            energy_sum: self.energy_sum,
            energy_sum_equalized: Some(self.energy_sum_equalized),
            endpoint,
        }
    }
}

/// Scale to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(x: &Tensor) -> Tensor {
    let (lo, hi) = (x.min(), x.max());
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return Tensor::zeros(x.shape());
    }
    x.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Subbands, `x_sum`, its equalized variant and both energies.
///
/// The equalization tile is shrunk to the subband size when the image is
/// smaller than one tile.
pub fn frequency_profile(image: &Tensor, eq: &EqualizeConfig) -> Result<FrequencyProfile> {
    let subbands = haar_dwt(image)?;
    let x_sum = subband_sum(&subbands)?;
    let (h, w) = x_sum.dims2()?;
    let tile = eq.tile.min(h).min(w);
    let x_sum_equalized = adaptive_hist_eq(&min_max_normalize(&x_sum), tile, eq.clip)?;
    Ok(FrequencyProfile {
        energy_ll: energy(&subbands.ll),
        energy_sum: energy(&x_sum),
        energy_sum_equalized: energy(&x_sum_equalized),
        subbands,
        x_sum,
        x_sum_equalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let w = rows[0].len();
        Tensor::from_vec(&[rows.len(), w], rows.concat()).unwrap()
    }

    #[test]
    fn identity_block() {
        let s = haar_dwt(&t2(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.ll.data(), &[1.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[1.0]);
        assert!((subband_sum(&s).unwrap().data()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_block() {
        let s = haar_dwt(&Tensor::full(&[2, 2], 1.0)).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn inverse_of_constant_and_zero() {
        let z = Tensor::zeros(&[1, 1]);
        let s = Subbands {
            ll: Tensor::full(&[1, 1], 2.0),
            lh: z.clone(),
            hl: z.clone(),
            hh: z.clone(),
        };
        assert_eq!(haar_idwt(&s).unwrap(), Tensor::full(&[2, 2], 1.0));
        let zeros = Subbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        };
        assert_eq!(haar_idwt(&zeros).unwrap().sum_sq(), 0.0);
    }

    #[test]
    fn odd_extent_and_mismatched_bands_rejected() {
        assert!(haar_dwt(&Tensor::zeros(&[3, 4])).is_err());
        let s = Subbands {
            ll: Tensor::zeros(&[2, 2]),
            lh: Tensor::zeros(&[2, 2]),
            hl: Tensor::zeros(&[2, 1]),
            hh: Tensor::zeros(&[2, 2]),
        };
        assert!(haar_idwt(&s).is_err());
        assert!(subband_sum(&s).is_err());
    }

    #[test]
    fn subband_sum_arithmetic() {
        let s = Subbands {
            ll: Tensor::zeros(&[2, 2]),
            lh: Tensor::full(&[2, 2], 1.0),
            hl: Tensor::full(&[2, 2], 2.0),
            hh: Tensor::full(&[2, 2], 3.0),
        };
        assert_eq!(subband_sum(&s).unwrap(), Tensor::full(&[2, 2], 2.0));
        let ones = Subbands {
            hl: Tensor::full(&[2, 2], 1.0),
            hh: Tensor::full(&[2, 2], 1.0),
            ..s
        };
        assert_eq!(subband_sum(&ones).unwrap(), Tensor::full(&[2, 2], 1.0));
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&t2(&[&[3.0, 4.0]])), 25.0);
        assert_eq!(energy(&Tensor::zeros(&[3, 3])), 0.0);
    }

    #[test]
    fn constant_image_has_no_detail_energy() {
        let p = frequency_profile(&Tensor::full(&[32, 32], 0.4), &EqualizeConfig::default()).unwrap();
        assert_eq!(p.energy_sum, 0.0);
        assert!(p.energy_ll > 0.0);
    }

    #[test]
    fn checkerboard_beats_its_smoothed_version() {
        let n = 32;
        let board = Tensor::from_vec(&[n, n], (0..n * n).map(|k| ((k / n + k % n) % 2) as f64).collect()).unwrap();
        // 2x2 box blur with wraparound
        let mut smooth = Tensor::zeros(&[n, n]);
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += board.data()[((y + dy) % n) * n + (x + dx) % n];
                }
                smooth.data_mut()[y * n + x] = acc / 4.0;
            }
        }
        let cfg = EqualizeConfig::default();
        let pb = frequency_profile(&board, &cfg).unwrap();
        let ps = frequency_profile(&smooth, &cfg).unwrap();
        let hh = energy(&pb.subbands.hh);
        assert!(hh > 0.99 * (pb.subbands.total_energy() - pb.energy_ll));
        assert!(pb.energy_sum > ps.energy_sum);
    }

    proptest! {
        #[test]
        fn parseval_and_round_trip(seed in any::<u64>(), hh in 1usize..9, ww in 1usize..9) {
            let img = Rng::new(seed).fill_normal(&[2 * hh, 2 * ww]).unwrap();
            let s = haar_dwt(&img).unwrap();
            let e = energy(&img);
            prop_assert!((s.total_energy() - e).abs() <= 1e-6 * e);
            let back = haar_idwt(&s).unwrap();
            prop_assert!(back.max_abs_diff(&img).unwrap() < 1e-6);
        }

        #[test]
        fn subband_sum_is_linear(seed in any::<u64>(), k in -4.0f64..4.0) {
            let img = Rng::new(seed).fill_normal(&[6, 6]).unwrap();
            let s = haar_dwt(&img).unwrap();
            let lhs = subband_sum(&s.scale(k)).unwrap();
            let rhs = subband_sum(&s).unwrap().scale(k);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
