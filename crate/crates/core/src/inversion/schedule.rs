use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Tensor;

/// Where embedding optimization starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Null-token embedding.
    #[default]
    NullInit,
    /// Embedding of the source prompt.
    PromptInit,
}

/// Per-step unconditional embeddings `φ_1 ..= φ_T`, stored in execution
/// order: `φ_1` drives the first (noisiest) sampling step.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSchedule {
    phis: Vec<Tensor>,
    /// Number of leading steps that carry optimized embeddings.
    pub endpoint: Option<usize>,
    pub init_mode: InitMode,
}

impl EmbeddingSchedule {
    pub fn new(phis: Vec<Tensor>, endpoint: Option<usize>, init_mode: InitMode) -> Result<Self> {
        if phis.is_empty() {
            return Err(arg_err!("embedding schedule is empty"));
        }
        if let Some(e) = endpoint {
            if e > phis.len() {
                return Err(arg_err!("endpoint {e} beyond {} steps", phis.len()));
            }
        }
        Ok(Self {
            phis,
            endpoint,
            init_mode,
        })
    }

    /// The same embedding at every step.
    pub fn constant(phi: Tensor, steps: usize) -> Self {
        Self {
            phis: vec![phi; steps],
            endpoint: None,
            init_mode: InitMode::NullInit,
        }
    }

    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }

    /// Embedding for sampling step `k` (1-based).
    pub fn phi(&self, k: usize) -> &Tensor {
        &self.phis[k - 1]
    }

    pub fn phis(&self) -> &[Tensor] {
        &self.phis
    }
}

/// Keep `φ_1 ..= φ_{t*}` and repeat `φ_{t*}` for the remaining steps.
pub fn phi_copy(phis: &[Tensor], t_star: usize, steps: usize) -> Result<EmbeddingSchedule> {
    if t_star == 0 || t_star > steps {
        return Err(arg_err!("endpoint {t_star} outside 1..={steps}"));
    }
    if phis.len() < t_star {
        return Err(arg_err!("{} embeddings for endpoint {t_star}", phis.len()));
    }
    let mut out = phis[..t_star].to_vec();
    out.resize(steps, phis[t_star - 1].clone());
    Ok(EmbeddingSchedule {
        phis: out,
        endpoint: Some(t_star),
        init_mode: InitMode::NullInit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phis(n: usize) -> Vec<Tensor> {
        (1..=n).map(|i| Tensor::vector(vec![i as f64, -(i as f64)])).collect()
    }

    #[test]
    fn copy_pattern() {
        let p = phis(5);
        let s = phi_copy(&p, 3, 5).unwrap();
        let want = [&p[0], &p[1], &p[2], &p[2], &p[2]];
        for (k, w) in want.iter().enumerate() {
            assert_eq!(s.phi(k + 1), *w);
        }
        assert_eq!(s.endpoint, Some(3));
        assert_eq!(phi_copy(&p, 5, 5).unwrap().phis(), p.as_slice());
        assert!(phi_copy(&p, 1, 5).unwrap().phis().iter().all(|x| x == &p[0]));
        assert!(phi_copy(&p, 0, 5).is_err());
        assert!(phi_copy(&p, 6, 5).is_err());
        assert!(phi_copy(&p[..2], 3, 5).is_err());
    }

    proptest! {
        #[test]
        fn copied_tail_is_bit_exact(steps in 1usize..60, frac in 0.0f64..1.0, seed in 0u64..100) {
            let mut rng = crate::numerics::Rng::new(seed);
            let p: Vec<Tensor> = (0..steps).map(|_| rng.fill_normal(&[3]).unwrap()).collect();
            let t = 1 + ((steps - 1) as f64 * frac) as usize;
            let s = phi_copy(&p, t, steps).unwrap();
            prop_assert_eq!(s.len(), steps);
            for k in 1..=t {
                prop_assert_eq!(s.phi(k), &p[k - 1]);
            }
            for k in t + 1..=steps {
                prop_assert_eq!(s.phi(k).data(), p[t - 1].data());
            }
        }
    }
}
