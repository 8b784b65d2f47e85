//! Tensor arithmetic, seeded randomness and hand-differentiated layers.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
mod rng;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use layers::{Layer, LayerKind};
pub use optim::{Adam, AdamConfig};
pub use rng::{rng_fill_normal, Rng};
pub use tensor::Tensor;

/// Models whose parameters can be enumerated by name, for optimizers and
/// checkpoints. Both methods list parameters in the same order.
pub trait ParamSet {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameters concatenated into one vector.
    fn flat_params(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.named_params().into_iter().map(|(_, t)| t).collect();
        Tensor::concat(&parts)
    }

    /// Inverse of [`ParamSet::flat_params`].
    fn load_flat(&mut self, flat: &Tensor) -> crate::Result<()> {
        if flat.len() != self.param_count() {
            return Err(crate::error::shape_err!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            ));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Round all parameters to `f32` so a checkpoint reproduces them exactly.
    fn quantize_params(&mut self) {
        for p in self.params_mut() {
            p.quantize_f32();
        }
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    params: Vec<(&'static str, &'a Tensor)>,
) -> impl Iterator<Item = (String, &'a Tensor)> + 'a {
    let prefix = prefix.to_string();
    params.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}
