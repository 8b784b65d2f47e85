use super::{check_grad_shape, CacheTag, Layer, LayerId, LayerKind};
use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Tensor};

/// 2-D convolution over a `(channels, height, width)` input with zero
/// "same" padding (`kernel / 2`) and an integer stride.
#[derive(Clone, Debug)]
pub struct Conv2d {
    id: LayerId,
    /// `(out, in, k, k)`
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct Conv2dCache {
    tag: CacheTag,
    input: Tensor,
}

struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    stride: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Output index range `[lo, hi)` whose input index `o*stride + tap - pad`
    /// falls inside `0..len`.
    fn valid(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = tap as isize - self.pad as isize;
        // o*s + off >= 0  and  o*s + off <= len-1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((len as isize - 1 - off).div_euclid(s) + 1).min(out_len as isize);
        (lo.max(0) as usize, hi.max(0) as usize)
    }

    fn src(&self, o: usize, tap: usize) -> usize {
        o * self.stride + tap - self.pad
    }
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 4 || s[2] != s[3] || s[2] % 2 == 0 {
            return Err(shape_err!("conv weight must be (out, in, k, k) with odd k, got {s:?}"));
        }
        if bias.shape() != [s[0]] {
            return Err(shape_err!("conv bias {:?} for weight {s:?}", bias.shape()));
        }
        if stride == 0 {
            return Err(shape_err!("conv stride must be positive"));
        }
        Ok(Self {
            id: LayerId::fresh(),
            weight,
            bias,
            stride,
        })
    }

    pub fn init(rng: &mut Rng, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let std = (1.0 / (cin * k * k) as f64).sqrt();
        let w = rng.fill_normal(&[cout, cin, k, k]).unwrap().scale(std);
        Self::new(w, Tensor::zeros(&[cout]), stride).unwrap()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input_shape)?;
        Ok(vec![g.cout, g.ho, g.wo])
    }

    fn geometry(&self, shape: &[usize]) -> Result<Geometry> {
        let [cin, h, w] = *shape else {
            return Err(shape_err!("conv input must be (c, h, w), got {shape:?}"));
        };
        if cin != self.in_channels() {
            return Err(shape_err!(
                "conv expects {} input channels, got {cin}",
                self.in_channels()
            ));
        }
        let k = self.weight.shape()[2];
        let pad = k / 2;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err!("conv input {shape:?} smaller than kernel {k}"));
        }
        Ok(Geometry {
            cin,
            cout: self.out_channels(),
            k,
            pad,
            stride: self.stride,
            h,
            w,
            ho: (h + 2 * pad - k) / self.stride + 1,
            wo: (w + 2 * pad - k) / self.stride + 1,
        })
    }

    fn grad_input(&self, g: &Geometry, grad: &[f64]) -> Vec<f64> {
        let wt = self.weight.data();
        let mut gx = vec![0.0; g.cin * g.h * g.w];
        for o in 0..g.cout {
            let go = &grad[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
            for c in 0..g.cin {
                let gxc = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    let (ylo, yhi) = g.valid(ky, g.h, g.ho);
                    for kx in 0..g.k {
                        let wv = wt[((o * g.cin + c) * g.k + ky) * g.k + kx];
                        let (xlo, xhi) = g.valid(kx, g.w, g.wo);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = g.src(oy, ky);
                            let grow = &go[oy * g.wo..(oy + 1) * g.wo];
                            let xrow = &mut gxc[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                let ix0 = g.src(xlo, kx);
                                for (d, &gv) in xrow[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&grow[xlo..xhi]) {
                                    *d += wv * gv;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    xrow[g.src(ox, kx)] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Layer for Conv2d {
    type Cache = Conv2dCache;

    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Conv2dCache)> {
        let g = self.geometry(input.shape())?;
        let x = input.data();
        let wt = self.weight.data();
        let mut y = vec![0.0; g.cout * g.ho * g.wo];
        for o in 0..g.cout {
            let yo = &mut y[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
            yo.fill(self.bias.data()[o]);
            for c in 0..g.cin {
                let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    let (ylo, yhi) = g.valid(ky, g.h, g.ho);
                    for kx in 0..g.k {
                        let wv = wt[((o * g.cin + c) * g.k + ky) * g.k + kx];
                        let (xlo, xhi) = g.valid(kx, g.w, g.wo);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = g.src(oy, ky);
                            let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                            let yrow = &mut yo[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                let ix0 = g.src(xlo, kx);
                                for (d, &xv) in yrow[xlo..xhi].iter_mut().zip(&xrow[ix0..ix0 + (xhi - xlo)]) {
                                    *d += wv * xv;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    yrow[ox] += wv * xrow[g.src(ox, kx)];
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[g.cout, g.ho, g.wo], y)?;
        Ok((
            out,
            Conv2dCache {
                tag: CacheTag::new(self.id, input),
                input: input.clone(),
            },
        ))
    }

    fn backward(&self, cache: &Conv2dCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let gx = self.backward_input(cache, grad_out)?;
        let g = self.geometry(cache.input.shape())?;
        let x = cache.input.data();
        let grad = grad_out.data();
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(&[g.cout]);
        let gwd = gw.data_mut();
        for o in 0..g.cout {
            let go = &grad[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
            gb.data_mut()[o] = go.iter().sum();
            for c in 0..g.cin {
                let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    let (ylo, yhi) = g.valid(ky, g.h, g.ho);
                    for kx in 0..g.k {
                        let (xlo, xhi) = g.valid(kx, g.w, g.wo);
                        let mut acc = 0.0;
                        if xlo < xhi {
                            for oy in ylo..yhi {
                                let iy = g.src(oy, ky);
                                let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                                let grow = &go[oy * g.wo..(oy + 1) * g.wo];
                                if g.stride == 1 {
                                    let ix0 = g.src(xlo, kx);
                                    acc += grow[xlo..xhi]
                                        .iter()
                                        .zip(&xrow[ix0..ix0 + (xhi - xlo)])
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>();
                                } else {
                                    for ox in xlo..xhi {
                                        acc += grow[ox] * xrow[g.src(ox, kx)];
                                    }
                                }
                            }
                        }
                        gwd[((o * g.cin + c) * g.k + ky) * g.k + kx] = acc;
                    }
                }
            }
        }
        Ok((gx, vec![gw, gb]))
    }

    fn backward_input(&self, cache: &Conv2dCache, grad_out: &Tensor) -> Result<Tensor> {
        cache.tag.check(self.id, "conv2d")?;
        let g = self.geometry(cache.input.shape())?;
        check_grad_shape(grad_out, &[g.cout, g.ho, g.wo], "conv2d")?;
        Tensor::from_vec(cache.input.shape(), self.grad_input(&g, grad_out.data()))
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
    fn one_by_one_kernel_scales() {
        let conv = Conv2d::new(Tensor::full(&[1, 1, 1, 1], 2.0), Tensor::zeros(&[1]), 1).unwrap();
        let x = Rng::new(4).fill_normal(&[1, 5, 6]).unwrap();
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y, x.scale(2.0));
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = Rng::new(9);
        for stride in [1, 2] {
            let conv = Conv2d::init(&mut rng, 2, 3, 3, stride);
            let x = rng.fill_normal(&[2, 7, 6]).unwrap();
            let (y, _) = conv.forward(&x).unwrap();
            let (_, ho, wo) = y.dims3().unwrap();
            for o in 0..3 {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.data()[o];
                        for c in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                        continue;
                                    }
                                    acc += conv.weight.data()[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data()[(c * 7 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                        let got = y.data()[(o * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_channels_rejected() {
        let conv = Conv2d::init(&mut Rng::new(0), 2, 3, 3, 1);
        assert!(conv.forward(&Tensor::zeros(&[3, 4, 4])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[2, 16])).is_err());
    }
}
