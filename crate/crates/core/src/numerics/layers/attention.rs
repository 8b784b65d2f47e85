use super::{check_grad_shape, CacheTag, Dense, DenseCache, Layer, LayerId, LayerKind};
use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Tensor};

/// Multi-head scaled dot-product attention.
///
/// Queries come from one token sequence and keys/values from another
/// ([`MultiHeadAttention::forward_cross`]); the [`Layer`] impl is the
/// self-attention special case where both are the input.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    id: LayerId,
    heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    tag: CacheTag,
    q_cache: DenseCache,
    k_cache: DenseCache,
    v_cache: DenseCache,
    o_cache: DenseCache,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per head, `(n_query, n_key)` row-stochastic weights.
    weights: Vec<Tensor>,
}

impl AttentionCache {
    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }
}

impl MultiHeadAttention {
    /// `heads * head_width` is the model width; queries are read from
    /// `query_in`-wide tokens, keys/values from `kv_in`-wide tokens, and the
    /// output has `out` columns.
    pub fn init(rng: &mut Rng, query_in: usize, kv_in: usize, heads: usize, head_width: usize, out: usize) -> Self {
        let model = heads * head_width;
        Self {
            id: LayerId::fresh(),
            heads,
            query: Dense::init(rng, query_in, model),
            key: Dense::init(rng, kv_in, model),
            value: Dense::init(rng, kv_in, model),
            output: Dense::init(rng, model, out),
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn model_width(&self) -> usize {
        self.query.out_width()
    }

    fn head_width(&self) -> usize {
        self.model_width() / self.heads
    }

    pub fn forward_cross(&self, q_in: &Tensor, kv_in: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let (nq, _) = q_in.dims2()?;
        let (nk, _) = kv_in.dims2()?;
        let (q, q_cache) = self.query.forward(q_in)?;
        let (k, k_cache) = self.key.forward(kv_in)?;
        let (v, v_cache) = self.value.forward(kv_in)?;
        let dm = self.model_width();
        let dh = self.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = vec![0.0; nq * dm];
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * dh;
            let mut a = vec![0.0; nq * nk];
            for i in 0..nq {
                let qi = &q.data()[i * dm + off..i * dm + off + dh];
                let row = &mut a[i * nk..(i + 1) * nk];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k.data()[j * dm + off..j * dm + off + dh];
                    *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                }
                softmax_in_place(row);
                let c = &mut ctx[i * dm + off..i * dm + off + dh];
                for (j, &w) in row.iter().enumerate() {
                    let vj = &v.data()[j * dm + off..j * dm + off + dh];
                    for (cc, &vv) in c.iter_mut().zip(vj) {
                        *cc += w * vv;
                    }
                }
            }
            weights.push(Tensor::from_vec(&[nq, nk], a)?);
        }
        let ctx = Tensor::from_vec(&[nq, dm], ctx)?;
        let (out, o_cache) = self.output.forward(&ctx)?;
        Ok((
            out,
            AttentionCache {
                tag: CacheTag::new(self.id, q_in),
                q_cache,
                k_cache,
                v_cache,
                o_cache,
                q,
                k,
                v,
                weights,
            },
        ))
    }

    /// Returns `(grad_query_in, grad_kv_in, param_grads)`.
    pub fn backward_cross(&self, cache: &AttentionCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
        cache.tag.check(self.id, "attention")?;
        let nq = cache.q.shape()[0];
        let nk = cache.k.shape()[0];
        check_grad_shape(grad_out, &[nq, self.output.out_width()], "attention")?;
        let (gctx, go) = self.output.backward(&cache.o_cache, grad_out)?;
        let dm = self.model_width();
        let dh = self.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = vec![0.0; nq * dm];
        let mut gk = vec![0.0; nk * dm];
        let mut gv = vec![0.0; nk * dm];
        let (q, k, v) = (cache.q.data(), cache.k.data(), cache.v.data());
        for h in 0..self.heads {
            let off = h * dh;
            let a = cache.weights[h].data();
            for i in 0..nq {
                let gc = &gctx.data()[i * dm + off..i * dm + off + dh];
                let arow = &a[i * nk..(i + 1) * nk];
                // gA_ij = gc · v_j ; gV_j += A_ij gc
                let mut ga = vec![0.0; nk];
                for j in 0..nk {
                    let vj = &v[j * dm + off..j * dm + off + dh];
                    ga[j] = gc.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let gvj = &mut gv[j * dm + off..j * dm + off + dh];
                    for (g, &c) in gvj.iter_mut().zip(gc) {
                        *g += arow[j] * c;
                    }
                }
                let dot: f64 = ga.iter().zip(arow).map(|(x, y)| x * y).sum();
                let qi = &q[i * dm + off..i * dm + off + dh];
                for j in 0..nk {
                    let gs = arow[j] * (ga[j] - dot) * scale;
                    if gs == 0.0 {
                        continue;
                    }
                    let kj = &k[j * dm + off..j * dm + off + dh];
                    let gqi = &mut gq[i * dm + off..i * dm + off + dh];
                    for (g, &kk) in gqi.iter_mut().zip(kj) {
                        *g += gs * kk;
                    }
                    let gkj = &mut gk[j * dm + off..j * dm + off + dh];
                    for (g, &qq) in gkj.iter_mut().zip(qi) {
                        *g += gs * qq;
                    }
                }
            }
        }
        let gq = Tensor::from_vec(&[nq, dm], gq)?;
        let gk = Tensor::from_vec(&[nk, dm], gk)?;
        let gv = Tensor::from_vec(&[nk, dm], gv)?;
        let (gq_in, gqp) = self.query.backward(&cache.q_cache, &gq)?;
        let (gk_in, gkp) = self.key.backward(&cache.k_cache, &gk)?;
        let (gv_in, gvp) = self.value.backward(&cache.v_cache, &gv)?;
        let gkv_in = gk_in.add(&gv_in)?;
        let mut grads = Vec::with_capacity(8);
        grads.extend(gqp);
        grads.extend(gkp);
        grads.extend(gvp);
        grads.extend(go);
        Ok((gq_in, gkv_in, grads))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

impl Layer for MultiHeadAttention {
    type Cache = AttentionCache;

    fn kind(&self) -> LayerKind {
        LayerKind::Attention
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, AttentionCache)> {
        if self.query.in_width() != self.key.in_width() {
            return Err(shape_err!("self-attention needs equal query and key/value widths"));
        }
        self.forward_cross(input, input)
    }

    fn backward(&self, cache: &AttentionCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (gq, gkv, grads) = self.backward_cross(cache, grad_out)?;
        Ok((gq.add(&gkv)?, grads))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("query.weight", &self.query.weight),
            ("query.bias", &self.query.bias),
            ("key.weight", &self.key.weight),
            ("key.bias", &self.key.bias),
            ("value.weight", &self.value.weight),
            ("value.bias", &self.value.bias),
            ("output.weight", &self.output.weight),
            ("output.bias", &self.output.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("query.weight", &mut self.query.weight),
            ("query.bias", &mut self.query.bias),
            ("key.weight", &mut self.key.weight),
            ("key.bias", &mut self.key.bias),
            ("value.weight", &mut self.value.weight),
            ("value.bias", &mut self.value.bias),
            ("output.weight", &mut self.output.weight),
            ("output.bias", &mut self.output.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_row_stochastic() {
        let mut rng = Rng::new(5);
        let att = MultiHeadAttention::init(&mut rng, 8, 6, 4, 4, 8);
        let q = rng.fill_normal(&[3, 8]).unwrap();
        let kv = rng.fill_normal(&[10, 6]).unwrap();
        let (out, cache) = att.forward_cross(&q, &kv).unwrap();
        assert_eq!(out.shape(), &[3, 8]);
        for w in cache.weights() {
            for i in 0..3 {
                let s: f64 = w.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_projected_value() {
        let mut rng = Rng::new(6);
        let att = MultiHeadAttention::init(&mut rng, 4, 4, 2, 2, 4);
        let q = rng.fill_normal(&[1, 4]).unwrap();
        let kv = rng.fill_normal(&[1, 4]).unwrap();
        let (out, _) = att.forward_cross(&q, &kv).unwrap();
        let (v, _) = att.value.forward(&kv).unwrap();
        let (expect, _) = att.output.forward(&v).unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }
}
