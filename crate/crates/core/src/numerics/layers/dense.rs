use super::{as_rows, check_grad_shape, CacheTag, Layer, LayerId, LayerKind};
use crate::error::Result;
use crate::numerics::{Rng, Tensor};

/// Affine map `y = W x + b` applied to a vector or to each row of a matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    id: LayerId,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    tag: CacheTag,
    input: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(crate::error::shape_err!(
                "bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            ));
        }
        Ok(Self {
            id: LayerId::fresh(),
            weight,
            bias,
        })
    }

    /// LeCun-normal weights, zero bias.
    pub fn init(rng: &mut Rng, input: usize, output: usize) -> Self {
        let std = (1.0 / input as f64).sqrt();
        let weight = rng.fill_normal(&[output, input]).unwrap().scale(std);
        Self::new(weight, Tensor::zeros(&[output])).unwrap()
    }

    pub fn identity(n: usize) -> Self {
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        Self::new(w, Tensor::zeros(&[n])).unwrap()
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[0]
    }

    fn out_shape(&self, input: &Tensor) -> Vec<usize> {
        match input.shape() {
            [_] => vec![self.out_width()],
            [n, _] => vec![*n, self.out_width()],
            _ => unreachable!(),
        }
    }

    fn input_grad(&self, grad_out: &Tensor, rows: usize) -> Vec<f64> {
        let (o, i) = (self.out_width(), self.in_width());
        let w = self.weight.data();
        let g = grad_out.data();
        let mut gx = vec![0.0; rows * i];
        for n in 0..rows {
            let gx_row = &mut gx[n * i..(n + 1) * i];
            for (oo, &gv) in g[n * o..(n + 1) * o].iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                for (x, &wv) in gx_row.iter_mut().zip(&w[oo * i..(oo + 1) * i]) {
                    *x += gv * wv;
                }
            }
        }
        gx
    }
}

impl Layer for Dense {
    type Cache = DenseCache;

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, DenseCache)> {
        let (o, i) = (self.out_width(), self.in_width());
        let rows = as_rows(input, i, "dense")?;
        let w = self.weight.data();
        let b = self.bias.data();
        let x = input.data();
        let mut y = vec![0.0; rows * o];
        for n in 0..rows {
            let xr = &x[n * i..(n + 1) * i];
            for oo in 0..o {
                let wr = &w[oo * i..(oo + 1) * i];
                y[n * o + oo] = b[oo] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        let out = Tensor::from_vec(&self.out_shape(input), y)?;
        Ok((
            out,
            DenseCache {
                tag: CacheTag::new(self.id, input),
                input: input.clone(),
            },
        ))
    }

    fn backward(&self, cache: &DenseCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let gx = self.backward_input(cache, grad_out)?;
        let (o, i) = (self.out_width(), self.in_width());
        let rows = as_rows(&cache.input, i, "dense")?;
        let x = cache.input.data();
        let g = grad_out.data();
        let mut gw = Tensor::zeros(&[o, i]);
        let mut gb = Tensor::zeros(&[o]);
        {
            let gwd = gw.data_mut();
            for n in 0..rows {
                let xr = &x[n * i..(n + 1) * i];
                for oo in 0..o {
                    let gv = g[n * o + oo];
                    if gv == 0.0 {
                        continue;
                    }
                    for (acc, &xv) in gwd[oo * i..(oo + 1) * i].iter_mut().zip(xr) {
                        *acc += gv * xv;
                    }
                }
            }
        }
        for n in 0..rows {
            for (acc, &gv) in gb.data_mut().iter_mut().zip(&g[n * o..(n + 1) * o]) {
                *acc += gv;
            }
        }
        Ok((gx, vec![gw, gb]))
    }

    fn backward_input(&self, cache: &DenseCache, grad_out: &Tensor) -> Result<Tensor> {
        cache.tag.check(self.id, "dense")?;
        let rows = as_rows(&cache.input, self.in_width(), "dense")?;
        check_grad_shape(grad_out, &self.out_shape(&cache.input), "dense")?;
        Tensor::from_vec(cache.input.shape(), self.input_grad(grad_out, rows))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_input_and_gradient_through() {
        let layer = Dense::identity(3);
        let v = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let (y, cache) = layer.forward(&v).unwrap();
        assert_eq!(y, v);
        let g = Tensor::vector(vec![0.3, 0.1, -4.0]);
        let (gx, _) = layer.backward(&cache, &g).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let layer = Dense::init(&mut Rng::new(1), 4, 2);
        let x = Rng::new(2).fill_normal(&[3, 4]).unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let (gx, gp) = layer.backward(&cache, &Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(gx.sum_sq(), 0.0);
        assert!(gp.iter().all(|g| g.sum_sq() == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let layer = Dense::identity(3);
        assert!(layer.forward(&Tensor::zeros(&[4])).is_err());
        let (_, cache) = layer.forward(&Tensor::zeros(&[3])).unwrap();
        assert!(layer.backward(&cache, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn foreign_cache_is_rejected() {
        let a = Dense::identity(2);
        let b = Dense::identity(2);
        let (_, cache) = a.forward(&Tensor::zeros(&[2])).unwrap();
        let err = b.backward(&cache, &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, crate::Error::ContractViolation(_)));
    }
}
