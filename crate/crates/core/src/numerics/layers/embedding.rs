use super::{check_grad_shape, CacheTag, Layer, LayerId, LayerKind};
use crate::error::{arg_err, shape_err, Result};
use crate::numerics::{Rng, Tensor};

/// Lookup table mapping token ids to learned vectors.
///
/// Through the [`Layer`] interface the input is a rank-1 tensor of integral
/// ids; its gradient is always zero.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    id: LayerId,
    /// `(vocab, width)`
    pub table: Tensor,
}

#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    tag: CacheTag,
    ids: Vec<usize>,
}

impl EmbeddingTable {
    pub fn new(table: Tensor) -> Result<Self> {
        table.dims2()?;
        Ok(Self {
            id: LayerId::fresh(),
            table,
        })
    }

    pub fn init(rng: &mut Rng, vocab: usize, width: usize) -> Self {
        Self::new(rng.fill_normal(&[vocab, width]).unwrap()).unwrap()
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, id: usize) -> Result<Tensor> {
        if id >= self.vocab() {
            return Err(arg_err!("token id {id} outside vocabulary of {}", self.vocab()));
        }
        Ok(Tensor::vector(self.table.row(id).to_vec()))
    }

    fn ids(&self, input: &Tensor) -> Result<Vec<usize>> {
        if input.rank() != 1 {
            return Err(shape_err!("embedding input must be rank 1, got {:?}", input.shape()));
        }
        input
            .data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= self.vocab() {
                    Err(arg_err!("invalid token id {v}"))
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }
}

impl Layer for EmbeddingTable {
    type Cache = EmbeddingCache;

    fn kind(&self) -> LayerKind {
        LayerKind::EmbeddingTable
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, EmbeddingCache)> {
        let ids = self.ids(input)?;
        let d = self.width();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            out.extend_from_slice(self.table.row(i));
        }
        Ok((
            Tensor::from_vec(&[ids.len(), d], out)?,
            EmbeddingCache {
                tag: CacheTag::new(self.id, input),
                ids,
            },
        ))
    }

    fn backward(&self, cache: &EmbeddingCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        cache.tag.check(self.id, "embedding")?;
        let d = self.width();
        check_grad_shape(grad_out, &[cache.ids.len(), d], "embedding")?;
        let mut gt = Tensor::zeros(self.table.shape());
        for (n, &i) in cache.ids.iter().enumerate() {
            for j in 0..d {
                gt.data_mut()[i * d + j] += grad_out.data()[n * d + j];
            }
        }
        Ok((Tensor::zeros(&[cache.ids.len()]), vec![gt]))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("table", &self.table)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("table", &mut self.table)]
    }
}
