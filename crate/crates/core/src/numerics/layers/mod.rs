//! Layers with explicit forward/backward passes.
//!
//! Every layer returns an activation record from `forward` that `backward`
//! consumes. Records remember which layer produced them and the input shape;
//! handing a record to a different layer is a contract violation.

mod activation;
mod attention;
mod conv;
mod dense;
mod embedding;
mod norm;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use activation::{Activation, ActivationCache, Nonlinearity};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use conv::{Conv2d, Conv2dCache};
pub use dense::{Dense, DenseCache};
pub use embedding::{EmbeddingCache, EmbeddingTable};
pub use norm::{LayerNorm, LayerNormCache};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Attention,
    EmbeddingTable,
    Nonlinearity,
    Normalization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerId(u64);

impl LayerId {
    pub(crate) fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        LayerId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Common header stored in each activation record.
#[derive(Clone, Debug)]
pub struct CacheTag {
    layer: LayerId,
    input_shape: Vec<usize>,
}

impl CacheTag {
    pub(crate) fn new(layer: LayerId, input: &Tensor) -> Self {
        Self {
            layer,
            input_shape: input.shape().to_vec(),
        }
    }

    /// Shape of the input seen by the forward pass.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub(crate) fn check(&self, layer: LayerId, what: &str) -> Result<()> {
        if self.layer != layer {
            return Err(Error::ContractViolation(format!(
                "{what}: activation record belongs to another layer"
            )));
        }
        Ok(())
    }
}

pub trait Layer {
    type Cache;

    fn kind(&self) -> LayerKind;

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Self::Cache)>;

    /// Gradient w.r.t. the input and w.r.t. each parameter, in the order of
    /// [`Layer::params`].
    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)>;

    /// Input gradient only. Layers override this when parameter gradients are
    /// expensive.
    fn backward_input(&self, cache: &Self::Cache, grad_out: &Tensor) -> Result<Tensor> {
        Ok(self.backward(cache, grad_out)?.0)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)>;

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;
}

pub(crate) fn check_grad_shape(grad: &Tensor, expected: &[usize], what: &str) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::InvalidShape(format!(
            "{what}: gradient shape {:?}, expected {expected:?}",
            grad.shape()
        )));
    }
    Ok(())
}

/// `(rows, width)` view of a rank-1 or rank-2 input.
pub(crate) fn as_rows(t: &Tensor, width: usize, what: &str) -> Result<usize> {
    match *t.shape() {
        [w] if w == width => Ok(1),
        [n, w] if w == width => Ok(n),
        _ => Err(Error::InvalidShape(format!(
            "{what}: input {:?} incompatible with width {width}",
            t.shape()
        ))),
    }
}
