use super::{as_rows, check_grad_shape, CacheTag, Layer, LayerId, LayerKind};
use crate::error::Result;
use crate::numerics::Tensor;

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    id: LayerId,
    pub gain: Tensor,
    pub shift: Tensor,
    eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    tag: CacheTag,
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            id: LayerId::fresh(),
            gain: Tensor::full(&[width], 1.0),
            shift: Tensor::zeros(&[width]),
            eps: 1e-5,
        }
    }

    fn width(&self) -> usize {
        self.gain.len()
    }
}

impl Layer for LayerNorm {
    type Cache = LayerNormCache;

    fn kind(&self) -> LayerKind {
        LayerKind::Normalization
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let d = self.width();
        let rows = as_rows(input, d, "layer norm")?;
        let mut xhat = vec![0.0; rows * d];
        let mut out = vec![0.0; rows * d];
        let mut inv_std = Vec::with_capacity(rows);
        for n in 0..rows {
            let x = &input.data()[n * d..(n + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (x[j] - mean) * is;
                xhat[n * d + j] = h;
                out[n * d + j] = h * self.gain.data()[j] + self.shift.data()[j];
            }
        }
        Ok((
            Tensor::from_vec(input.shape(), out)?,
            LayerNormCache {
                tag: CacheTag::new(self.id, input),
                normalized: Tensor::from_vec(input.shape(), xhat)?,
                inv_std,
            },
        ))
    }

    fn backward(&self, cache: &LayerNormCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        cache.tag.check(self.id, "layer norm")?;
        check_grad_shape(grad_out, cache.normalized.shape(), "layer norm")?;
        let d = self.width();
        let rows = cache.inv_std.len();
        let mut gx = vec![0.0; rows * d];
        let mut ggain = Tensor::zeros(&[d]);
        let mut gshift = Tensor::zeros(&[d]);
        for n in 0..rows {
            let g = &grad_out.data()[n * d..(n + 1) * d];
            let xh = &cache.normalized.data()[n * d..(n + 1) * d];
            let mut mean_gh = 0.0;
            let mut mean_ghx = 0.0;
            for j in 0..d {
                ggain.data_mut()[j] += g[j] * xh[j];
                gshift.data_mut()[j] += g[j];
                let gh = g[j] * self.gain.data()[j];
                mean_gh += gh;
                mean_ghx += gh * xh[j];
            }
            mean_gh /= d as f64;
            mean_ghx /= d as f64;
            for j in 0..d {
                let gh = g[j] * self.gain.data()[j];
                gx[n * d + j] = cache.inv_std[n] * (gh - mean_gh - xh[j] * mean_ghx);
            }
        }
        Ok((Tensor::from_vec(cache.normalized.shape(), gx)?, vec![ggain, gshift]))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("gain", &self.gain), ("shift", &self.shift)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("gain", &mut self.gain), ("shift", &mut self.shift)]
    }
}
