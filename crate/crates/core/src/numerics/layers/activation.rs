use serde::{Deserialize, Serialize};

use super::{check_grad_shape, CacheTag, Layer, LayerId, LayerKind};
use crate::error::Result;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Silu,
    Tanh,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Silu => x / (1.0 + (-x).exp()),
            Nonlinearity::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Pointwise nonlinearity.
#[derive(Clone, Debug)]
pub struct Activation {
    id: LayerId,
    pub f: Nonlinearity,
}

#[derive(Clone, Debug)]
pub struct ActivationCache {
    tag: CacheTag,
    input: Tensor,
}

impl Activation {
    pub fn new(f: Nonlinearity) -> Self {
        Self {
            id: LayerId::fresh(),
            f,
        }
    }
}

impl Layer for Activation {
    type Cache = ActivationCache;

    fn kind(&self) -> LayerKind {
        LayerKind::Nonlinearity
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationCache)> {
        Ok((
            input.map(|v| self.f.apply(v)),
            ActivationCache {
                tag: CacheTag::new(self.id, input),
                input: input.clone(),
            },
        ))
    }

    fn backward(&self, cache: &ActivationCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        cache.tag.check(self.id, "activation")?;
        check_grad_shape(grad_out, cache.input.shape(), "activation")?;
        let dx = cache.input.map(|v| self.f.derivative(v)).mul(grad_out)?;
        Ok((dx, Vec::new()))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        for f in [Nonlinearity::Silu, Nonlinearity::Tanh] {
            let (y, _) = Activation::new(f).forward(&Tensor::zeros(&[4])).unwrap();
            assert_eq!(y.sum_sq(), 0.0);
        }
    }
}
