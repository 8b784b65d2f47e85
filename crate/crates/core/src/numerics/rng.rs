use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::{checked_numel, Tensor};
use crate::error::Result;

/// Seeded counter-based generator (ChaCha8 keyed by the seed, one
/// independent stream per stream index).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator on a derived stream; does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::with_stream(
            self.seed,
            self.stream
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(stream.wrapping_add(1)),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Standard-normal tensor of the given shape.
    pub fn fill_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = checked_numel(shape)?;
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Free-function form of [`Rng::fill_normal`].
pub fn rng_fill_normal(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    rng.fill_normal(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(7).fill_normal(&[2]).unwrap();
        let b = Rng::new(7).fill_normal(&[2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_sample_mean_near_zero() {
        let t = Rng::new(11).fill_normal(&[10_000]).unwrap();
        let mean = t.mean();
        assert!(mean.abs() < 0.05, "mean {mean}");
        let var = t.sum_sq() / 10_000.0 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn single_value_and_invalid_shape() {
        let t = Rng::new(1).fill_normal(&[1]).unwrap();
        assert!(t.data()[0].is_finite());
        assert!(Rng::new(1).fill_normal(&[3, 0]).is_err());
        assert!(Rng::new(1).fill_normal(&[]).is_err());
    }

    #[test]
    fn forks_are_independent_of_parent_progress() {
        let mut a = Rng::new(3);
        let f1 = a.fork(5).fill_normal(&[4]).unwrap();
        a.next_u64();
        let f2 = a.fork(5).fill_normal(&[4]).unwrap();
        assert_eq!(f1, f2);
        assert_ne!(f1, a.fork(6).fill_normal(&[4]).unwrap());
    }
}
