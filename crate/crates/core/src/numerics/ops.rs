//! Parameter-free tensor maps used between layers, each with its adjoint.

use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

/// `x[c, :, :] += bias[c]`
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if bias.len() != c {
        return Err(shape_err!("channel bias of {} for {c} channels", bias.len()));
    }
    let mut out = x.clone();
    for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let b = bias.data()[ch];
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

/// Adjoint of [`add_channel_bias`] w.r.t. the bias: per-channel sums.
pub fn channel_sums(grad: &Tensor) -> Result<Tensor> {
    let (_, h, w) = grad.dims3()?;
    Ok(Tensor::vector(
        grad.data().chunks(h * w).map(|p| p.iter().sum()).collect(),
    ))
}

/// `(c, h, w) -> (c)` mean over space.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    let n = (h * w) as f64;
    Ok(Tensor::vector(
        x.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / n).collect(),
    ))
}

pub fn global_avg_pool_backward(grad: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let [c, h, w] = *input_shape else {
        return Err(shape_err!("pool input must be rank 3"));
    };
    if grad.len() != c {
        return Err(shape_err!("pool gradient of {} for {c} channels", grad.len()));
    }
    let n = (h * w) as f64;
    let mut data = Vec::with_capacity(c * h * w);
    for &g in grad.data() {
        data.extend(std::iter::repeat(g / n).take(h * w));
    }
    Tensor::from_vec(input_shape, data)
}

/// Nearest-neighbour 2x upsampling of `(c, h, w)`.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                od[(ch * 2 * h + y) * 2 * w + xx] = x.data()[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2_backward(grad: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = grad.dims3()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(shape_err!("upsample gradient {:?} has odd extent", grad.shape()));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[c, h, w]);
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                od[(ch * h + y / 2) * w + x / 2] += grad.data()[(ch * h2 + y) * w2 + x];
            }
        }
    }
    Ok(out)
}

/// Split a `(h, w)` or `(1, h, w)` map into non-overlapping `p x p` patches,
/// returning `(tokens, p*p)` in row-major patch order.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (h, w) = match *x.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(shape_err!("patchify expects a single-channel map, got {:?}", x.shape())),
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(arg_err!("{h}x{w} map is not divisible into {p}x{p} patches"));
    }
    let (ph, pw) = (h / p, w / p);
    let mut out = Vec::with_capacity(h * w);
    for py in 0..ph {
        for px in 0..pw {
            for dy in 0..p {
                let row = (py * p + dy) * w + px * p;
                out.extend_from_slice(&x.data()[row..row + p]);
            }
        }
    }
    Tensor::from_vec(&[ph * pw, p * p], out)
}

/// `(n, d) -> (d)` mean over rows.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    let mut out = vec![0.0; d];
    for r in 0..n {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    Ok(Tensor::vector(out))
}

pub fn mean_rows_backward(grad: &Tensor, rows: usize) -> Result<Tensor> {
    let d = grad.len();
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        data.extend(grad.data().iter().map(|g| g / rows as f64));
    }
    Tensor::from_vec(&[rows, d], data)
}

/// Standard transformer sinusoidal embedding of a scalar position.
pub fn sinusoidal_embedding(position: f64, width: usize) -> Tensor {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    Tensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn upsample_adjoint() {
        let mut rng = Rng::new(1);
        let x = rng.fill_normal(&[2, 3, 4]).unwrap();
        let g = rng.fill_normal(&[2, 6, 8]).unwrap();
        let lhs = upsample2(&x).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&upsample2_backward(&g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_adjoint() {
        let mut rng = Rng::new(2);
        let x = rng.fill_normal(&[3, 4, 4]).unwrap();
        let g = rng.fill_normal(&[3]).unwrap();
        let lhs = global_avg_pool(&x).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&global_avg_pool_backward(&g, x.shape()).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn patchify_layout() {
        let x = Tensor::from_vec(&[4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
        assert!(patchify(&x, 3).is_err());
    }
}
