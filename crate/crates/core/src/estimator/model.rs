use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::layers::{
    Activation, ActivationCache, AttentionCache, Conv2d, Conv2dCache, Dense, DenseCache, Layer, LayerNorm,
    LayerNormCache, MultiHeadAttention, Nonlinearity,
};
use crate::numerics::{ops, prefixed, ParamSet, Rng, Tensor};
use crate::wavelet::EqualizeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Channel widths of the image encoder; the last is its feature width.
    pub image_widths: [usize; 3],
    /// Channel widths of each wavelet encoder.
    pub wavelet_widths: [usize; 3],
    /// Side of the (square) latent.
    pub latent_size: usize,
    pub patch: usize,
    pub heads: usize,
    pub head_width: usize,
    /// Sampling steps `T`; the head predicts the endpoint as a fraction of it.
    pub steps: usize,
    /// Initial head bias, as a fraction of `steps`.
    pub endpoint_prior: f64,
    pub equalize: EqualizeConfig,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            image_widths: [16, 32, 128],
            wavelet_widths: [16, 32, 64],
            latent_size: 32,
            patch: 4,
            heads: 4,
            head_width: 16,
            steps: 50,
            endpoint_prior: 0.5,
            equalize: EqualizeConfig::default(),
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn visual_width(&self) -> usize {
        self.image_widths[2] + 2 * self.wavelet_widths[2]
    }

    pub fn model_width(&self) -> usize {
        self.heads * self.head_width
    }

    pub fn tokens(&self) -> usize {
        (self.latent_size / self.patch).pow(2)
    }
}

/// One estimator input: the image, its two wavelet views and a latent
/// `t` steps into sampling.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorInput<'a> {
    pub x_ori: &'a Tensor,
    pub x_ll: &'a Tensor,
    pub x_sum: &'a Tensor,
    pub z_t: &'a Tensor,
    pub t: usize,
}

/// Three stride-2 3x3 convolutions with SiLU, then global average pooling.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    convs: [Conv2d; 3],
    act: Activation,
}

struct EncoderTape {
    convs: Vec<(Conv2dCache, ActivationCache)>,
    pooled_shape: Vec<usize>,
}

impl ConvEncoder {
    fn init(rng: &mut Rng, widths: [usize; 3]) -> Self {
        Self {
            convs: [
                Conv2d::init(rng, 1, widths[0], 3, 2),
                Conv2d::init(rng, widths[0], widths[1], 3, 2),
                Conv2d::init(rng, widths[1], widths[2], 3, 2),
            ],
            act: Activation::new(Nonlinearity::Silu),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, EncoderTape)> {
        let (h, w) = x.dims2()?;
        let mut cur = x.clone().reshape(&[1, h, w])?;
        let mut convs = Vec::with_capacity(3);
        for conv in &self.convs {
            let (a, cc) = conv.forward(&cur)?;
            let (y, ac) = self.act.forward(&a)?;
            convs.push((cc, ac));
            cur = y;
        }
        let pooled_shape = cur.shape().to_vec();
        Ok((ops::global_avg_pool(&cur)?, EncoderTape { convs, pooled_shape }))
    }

    fn backward(&self, tape: &EncoderTape, grad: &Tensor, out: &mut Vec<Tensor>) -> Result<()> {
        let mut g = ops::global_avg_pool_backward(grad, &tape.pooled_shape)?;
        let mut per_layer = Vec::with_capacity(3);
        for (conv, (cc, ac)) in self.convs.iter().zip(&tape.convs).rev() {
            let ga = self.act.backward(ac, &g)?.0;
            let (gi, gp) = conv.backward(cc, &ga)?;
            per_layer.push(gp);
            g = gi;
        }
        for gp in per_layer.into_iter().rev() {
            out.extend(gp);
        }
        Ok(())
    }

    fn named<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(prefixed(&format!("{name}.conv{}", i + 1), c.params()));
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for c in self.convs.iter_mut() {
            out.extend(c.params_mut().into_iter().map(|p| p.1));
        }
    }
}

/// Pre-norm residual self-attention block.
#[derive(Clone, Debug)]
struct SelfAttentionBlock {
    norm: LayerNorm,
    attn: MultiHeadAttention,
}

/// The endpoint estimator.
///
/// ```text
/// f_visual = [E_I(x_ori); E_WL(x_LL); E_WS(x_SUM)]
/// tokens   = W_tok (patches(z_t) + pos)
/// q*       = CrossAttn(query = f_visual, key = value = tokens)
/// s        = [q*; tokens] -> 2 x (s + SelfAttn(LN(s)))
/// endpoint = T * head(mean_rows(s)),   remaining = endpoint - t
/// ```
#[derive(Clone, Debug)]
pub struct WaveOptEstimator {
    pub config: EstimatorConfig,
    e_img: ConvEncoder,
    e_ll: ConvEncoder,
    e_sum: ConvEncoder,
    pos: Tensor,
    token_proj: Dense,
    cross: MultiHeadAttention,
    blocks: [SelfAttentionBlock; 2],
    head: Dense,
}

pub struct EstimatorTape {
    img: EncoderTape,
    ll: EncoderTape,
    sum: EncoderTape,
    token_proj: DenseCache,
    cross: AttentionCache,
    blocks: Vec<(LayerNormCache, AttentionCache)>,
    seq_rows: usize,
    head: DenseCache,
}

impl WaveOptEstimator {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        if config.patch == 0 || config.latent_size % config.patch != 0 {
            return Err(shape_err!(
                "latent side {} is not divisible into {}x{} patches",
                config.latent_size,
                config.patch,
                config.patch
            ));
        }
        let mut rng = Rng::with_stream(config.seed, 2);
        let dm = config.model_width();
        let block = |rng: &mut Rng| SelfAttentionBlock {
            norm: LayerNorm::new(dm),
            attn: MultiHeadAttention::init(rng, dm, dm, config.heads, config.head_width, dm),
        };
        let e_img = ConvEncoder::init(&mut rng, config.image_widths);
        let e_ll = ConvEncoder::init(&mut rng, config.wavelet_widths);
        let e_sum = ConvEncoder::init(&mut rng, config.wavelet_widths);
        let pp = config.patch * config.patch;
        let pos = rng.fill_normal(&[config.tokens(), pp])?.scale(0.1);
        let token_proj = Dense::init(&mut rng, pp, dm);
        let cross = MultiHeadAttention::init(&mut rng, config.visual_width(), dm, config.heads, config.head_width, dm);
        let blocks = [block(&mut rng), block(&mut rng)];
        let mut head = Dense::init(&mut rng, dm, 1);
        head.weight = head.weight.scale(0.1);
        head.bias = Tensor::vector(vec![config.endpoint_prior]);
        Ok(Self {
            config,
            e_img,
            e_ll,
            e_sum,
            pos,
            token_proj,
            cross,
            blocks,
            head,
        })
    }

    /// Set the head bias so an untrained model predicts `endpoint`.
    pub fn set_endpoint_prior(&mut self, endpoint: f64) {
        self.config.endpoint_prior = endpoint / self.config.steps as f64;
        self.head.bias = Tensor::vector(vec![self.config.endpoint_prior]);
    }

    fn encode_taped(&self, x_ori: &Tensor, x_ll: &Tensor, x_sum: &Tensor) -> Result<(Tensor, [EncoderTape; 3])> {
        let (h, w) = x_ori.dims2()?;
        for (name, x) in [("x_LL", x_ll), ("x_SUM", x_sum)] {
            if x.shape() != [h / 2, w / 2] {
                return Err(shape_err!("{name} is {:?}, expected [{}, {}]", x.shape(), h / 2, w / 2));
            }
        }
        let (fi, ti) = self.e_img.forward(x_ori)?;
        let (fl, tl) = self.e_ll.forward(x_ll)?;
        let (fs, ts) = self.e_sum.forward(x_sum)?;
        Ok((Tensor::concat(&[&fi, &fl, &fs]), [ti, tl, ts]))
    }

    /// `[E_I(x_ori); E_WL(x_LL); E_WS(x_SUM)]`
    pub fn encode_visual(&self, x_ori: &Tensor, x_ll: &Tensor, x_sum: &Tensor) -> Result<Tensor> {
        Ok(self.encode_taped(x_ori, x_ll, x_sum)?.0)
    }

    fn tokens_taped(&self, z_t: &Tensor) -> Result<(Tensor, DenseCache)> {
        let side = self.config.latent_size;
        if z_t.shape() != [side, side] {
            return Err(shape_err!(
                "latent is {:?}, estimator expects [{side}, {side}]",
                z_t.shape()
            ));
        }
        let patches = ops::patchify(z_t, self.config.patch)?.add(&self.pos)?;
        self.token_proj.forward(&patches)
    }

    /// Cross-attention from the visual feature to the latent tokens.
    /// Returns `q*` and the per-head attention weights.
    pub fn cross_attend(&self, f_visual: &Tensor, z_t: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (tokens, _) = self.tokens_taped(z_t)?;
        let q = f_visual.clone().reshape(&[1, f_visual.len()])?;
        let (q_star, cache) = self.cross.forward_cross(&q, &tokens)?;
        Ok((q_star, cache.weights().to_vec()))
    }

    /// Predicted remaining steps `t* - t`, unclamped.
    pub fn forward(&self, input: &EstimatorInput) -> Result<(f64, EstimatorTape)> {
        let (fv, [img, ll, sum]) = self.encode_taped(input.x_ori, input.x_ll, input.x_sum)?;
        let (tokens, token_proj) = self.tokens_taped(input.z_t)?;
        let q = fv.reshape(&[1, self.config.visual_width()])?;
        let (q_star, cross) = self.cross.forward_cross(&q, &tokens)?;
        let mut seq = Tensor::concat(&[&q_star, &tokens]);
        let rows = tokens.shape()[0] + 1;
        seq = seq.reshape(&[rows, self.config.model_width()])?;
        let mut blocks = Vec::with_capacity(2);
        for b in &self.blocks {
            let (n, nc) = b.norm.forward(&seq)?;
            let (a, ac) = b.attn.forward(&n)?;
            seq.axpy(1.0, &a)?;
            blocks.push((nc, ac));
        }
        let pooled = ops::mean_rows(&seq)?;
        let (s, head) = self.head.forward(&pooled)?;
        let pred = self.config.steps as f64 * s.data()[0] - input.t as f64;
        Ok((
            pred,
            EstimatorTape {
                img,
                ll,
                sum,
                token_proj,
                cross,
                blocks,
                seq_rows: rows,
                head,
            },
        ))
    }

    pub fn predict(&self, input: &EstimatorInput) -> Result<f64> {
        Ok(self.forward(input)?.0)
    }

    /// Parameter gradients (in [`ParamSet`] order) of `grad * prediction`.
    pub fn backward(&self, tape: &EstimatorTape, grad: f64) -> Result<Vec<Tensor>> {
        let dm = self.config.model_width();
        let g_s = Tensor::vector(vec![grad * self.config.steps as f64]);
        let (g_pooled, g_head) = self.head.backward(&tape.head, &g_s)?;
        let mut g_seq = ops::mean_rows_backward(&g_pooled, tape.seq_rows)?;
        let mut g_blocks = Vec::with_capacity(2);
        for (b, (nc, ac)) in self.blocks.iter().zip(&tape.blocks).rev() {
            let (g_n, g_attn) = b.attn.backward(ac, &g_seq)?;
            let (g_in, g_norm) = b.norm.backward(nc, &g_n)?;
            g_seq.axpy(1.0, &g_in)?;
            g_blocks.push((g_norm, g_attn));
        }
        g_blocks.reverse();
        let g_q_star = Tensor::from_vec(&[1, dm], g_seq.data()[..dm].to_vec())?;
        let mut g_tokens = Tensor::from_vec(&[tape.seq_rows - 1, dm], g_seq.data()[dm..].to_vec())?;
        let (g_q, g_kv, g_cross) = self.cross.backward_cross(&tape.cross, &g_q_star)?;
        g_tokens.axpy(1.0, &g_kv)?;
        let (g_patches, g_proj) = self.token_proj.backward(&tape.token_proj, &g_tokens)?;

        let wi = self.config.image_widths[2];
        let ww = self.config.wavelet_widths[2];
        let gq = g_q.data();
        let mut out = Vec::new();
        self.e_img
            .backward(&tape.img, &Tensor::vector(gq[..wi].to_vec()), &mut out)?;
        self.e_ll
            .backward(&tape.ll, &Tensor::vector(gq[wi..wi + ww].to_vec()), &mut out)?;
        self.e_sum
            .backward(&tape.sum, &Tensor::vector(gq[wi + ww..].to_vec()), &mut out)?;
        out.push(g_patches);
        out.extend(g_proj);
        out.extend(g_cross);
        for (g_norm, g_attn) in g_blocks {
            out.extend(g_norm);
            out.extend(g_attn);
        }
        out.extend(g_head);
        Ok(out)
    }
}

impl ParamSet for WaveOptEstimator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.e_img.named("e_img", &mut out);
        self.e_ll.named("e_ll", &mut out);
        self.e_sum.named("e_sum", &mut out);
        out.push(("pos".to_string(), &self.pos));
        out.extend(prefixed("token_proj", self.token_proj.params()));
        out.extend(prefixed("cross", self.cross.params()));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{}.norm", i + 1), b.norm.params()));
            out.extend(prefixed(&format!("block{}.attn", i + 1), b.attn.params()));
        }
        out.extend(prefixed("head", self.head.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.e_img.params_mut(&mut out);
        self.e_ll.params_mut(&mut out);
        self.e_sum.params_mut(&mut out);
        out.push(&mut self.pos);
        out.extend(self.token_proj.params_mut().into_iter().map(|p| p.1));
        out.extend(self.cross.params_mut().into_iter().map(|p| p.1));
        for b in self.blocks.iter_mut() {
            out.extend(b.norm.params_mut().into_iter().map(|p| p.1));
            out.extend(b.attn.params_mut().into_iter().map(|p| p.1));
        }
        out.extend(self.head.params_mut().into_iter().map(|p| p.1));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{loss_hinge, loss_l2, loss_total};
    use crate::numerics::finite_diff_check;

    pub(crate) fn tiny_config() -> EstimatorConfig {
        EstimatorConfig {
            image_widths: [2, 3, 4],
            wavelet_widths: [2, 2, 3],
            latent_size: 8,
            patch: 4,
            heads: 2,
            head_width: 4,
            steps: 50,
            endpoint_prior: 0.4,
            equalize: EqualizeConfig::default(),
            seed: 4,
        }
    }

    struct Inputs {
        x: Tensor,
        ll: Tensor,
        sum: Tensor,
        z: Tensor,
    }

    /// A random image in `[0, 1]` with its wavelet views and a Gaussian latent.
    fn inputs(seed: u64, side: usize) -> Inputs {
        let mut rng = Rng::new(seed);
        let x = Tensor::from_vec(&[side, side], (0..side * side).map(|_| rng.uniform()).collect()).unwrap();
        let p = crate::wavelet::frequency_profile(&x, &EqualizeConfig { tile: 4, clip: 2.0 }).unwrap();
        Inputs {
            x,
            ll: p.subbands.ll,
            sum: p.x_sum_equalized,
            z: rng.fill_normal(&[side, side]).unwrap(),
        }
    }

    impl Inputs {
        fn at(&self, t: usize) -> EstimatorInput<'_> {
            EstimatorInput {
                x_ori: &self.x,
                x_ll: &self.ll,
                x_sum: &self.sum,
                z_t: &self.z,
                t,
            }
        }
    }

    #[test]
    fn default_shapes_and_determinism() {
        let m = WaveOptEstimator::new(EstimatorConfig::default()).unwrap();
        let inp = inputs(1, 32);
        let fv = m.encode_visual(&inp.x, &inp.ll, &inp.sum).unwrap();
        assert_eq!(fv.shape(), &[256]);
        let zero = Tensor::zeros(&[32, 32]);
        let zh = Tensor::zeros(&[16, 16]);
        assert_eq!(
            m.encode_visual(&zero, &zh, &zh).unwrap(),
            m.encode_visual(&zero, &zh, &zh).unwrap()
        );
        let a = m.predict(&inp.at(3)).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, m.predict(&inp.at(3)).unwrap());
        assert!(m.encode_visual(&inp.x, &inp.x, &inp.sum).is_err());
    }

    #[test]
    fn concatenation_order_matters() {
        let m = WaveOptEstimator::new(EstimatorConfig::default()).unwrap();
        let inp = inputs(2, 32);
        let fv = m.encode_visual(&inp.x, &inp.ll, &inp.sum).unwrap();
        let swapped = m.encode_visual(&inp.x, &inp.sum, &inp.ll).unwrap();
        assert_ne!(fv, swapped);
        // the image block comes first, then LL, then SUM
        let (fi, _) = m.e_img.forward(&inp.x).unwrap();
        let (fl, _) = m.e_ll.forward(&inp.ll).unwrap();
        assert_eq!(&fv.data()[..128], fi.data());
        assert_eq!(&fv.data()[128..192], fl.data());
    }

    #[test]
    fn cross_attention_contracts() {
        let m = WaveOptEstimator::new(EstimatorConfig::default()).unwrap();
        let inp = inputs(3, 32);
        let fv = m.encode_visual(&inp.x, &inp.ll, &inp.sum).unwrap();
        let (q, w) = m.cross_attend(&fv, &inp.z).unwrap();
        assert_eq!(q.shape(), &[1, 64]);
        assert_eq!(w.len(), 4);
        for head in &w {
            assert!((head.sum() - 1.0).abs() < 1e-6);
        }
        assert!(m.cross_attend(&fv, &Tensor::zeros(&[30, 30])).is_err());
    }

    #[test]
    fn identical_tokens_ignore_attention_weights() {
        let m = WaveOptEstimator::new(tiny_config()).unwrap();
        // with no positional offsets, a constant latent gives identical tokens
        let mut flat = m.clone();
        flat.pos.fill(0.0);
        let z = Tensor::full(&[8, 8], 0.3);
        let (tokens, _) = flat.tokens_taped(&z).unwrap();
        let one = Tensor::from_vec(&[1, tokens.shape()[1]], tokens.row(0).to_vec()).unwrap();
        for seed in 0..3 {
            let q = Rng::new(seed).fill_normal(&[1, 10]).unwrap();
            let (all, _) = flat.cross.forward_cross(&q, &tokens).unwrap();
            let (single, _) = flat.cross.forward_cross(&q, &one).unwrap();
            assert!(all.max_abs_diff(&single).unwrap() < 1e-12);
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let cfg = tiny_config();
        let base = WaveOptEstimator::new(cfg).unwrap();
        let inp = inputs(5, 8);
        let (t, t_star, psnr_t, psnr_star) = (4, 40, 21.0, 24.5);
        let f = |theta: &Tensor| -> Result<(f64, Tensor)> {
            let mut m = base.clone();
            m.load_flat(theta)?;
            let (pred, tape) = m.forward(&inp.at(t))?;
            let l2 = loss_l2(pred, t_star, t);
            let loss = loss_total(l2, loss_hinge(psnr_star, psnr_t), 0.5, 0.5);
            let g = m.backward(&tape, 0.5 * 2.0 * (pred - (t_star - t) as f64))?;
            let parts: Vec<&Tensor> = g.iter().collect();
            Ok((loss, Tensor::concat(&parts)))
        };
        let err = finite_diff_check(&f, &base.flat_params(), 1e-3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn param_names_match_gradient_layout() {
        let m = WaveOptEstimator::new(tiny_config()).unwrap();
        let inp = inputs(6, 8);
        let (_, tape) = m.forward(&inp.at(0)).unwrap();
        let g = m.backward(&tape, 1.0).unwrap();
        let named = m.named_params();
        assert_eq!(g.len(), named.len());
        for (gi, (name, p)) in g.iter().zip(&named) {
            assert_eq!(gi.shape(), p.shape(), "{name}");
        }
    }
}
