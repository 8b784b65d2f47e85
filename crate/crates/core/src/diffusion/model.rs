use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::numerics::layers::{
    Activation, ActivationCache, Conv2d, Conv2dCache, Dense, DenseCache, EmbeddingTable, Layer, Nonlinearity,
};
use crate::numerics::{ops, prefixed, ParamSet, Rng, Tensor};

/// Token id of the empty ("null") prompt.
pub const NULL_TOKEN: usize = 0;

/// ε-prediction network interface used by guidance, DDIM and embedding
/// optimization.
pub trait NoisePredictor {
    type Tape;

    /// Width of the conditioning vector.
    fn cond_width(&self) -> usize;

    /// Conditioning vector of the empty prompt.
    fn null_cond(&self) -> Tensor {
        Tensor::zeros(&[self.cond_width()])
    }

    fn predict(&self, z: &Tensor, timestep: usize, cond: &Tensor) -> Result<Tensor> {
        Ok(self.predict_taped(z, timestep, cond)?.0)
    }

    fn predict_taped(&self, z: &Tensor, timestep: usize, cond: &Tensor) -> Result<(Tensor, Self::Tape)>;

    /// Vector-Jacobian product of the prediction w.r.t. the conditioning
    /// vector.
    fn cond_vjp(&self, tape: &Self::Tape, grad_eps: &Tensor) -> Result<Tensor>;
}

/// A prompt: its token ids, their embedding rows, and the pooled
/// conditioning vector (mean of the rows).
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Vec<usize>,
    /// `(n_tokens, width)`
    pub vectors: Tensor,
    cond: Tensor,
}

impl PromptEmbedding {
    pub fn from_vectors(tokens: Vec<usize>, vectors: Tensor) -> Result<Self> {
        let (n, _) = vectors.dims2()?;
        if n != tokens.len() {
            return Err(shape_err!("{} tokens but {n} embedding rows", tokens.len()));
        }
        let cond = ops::mean_rows(&vectors)?;
        Ok(Self { tokens, vectors, cond })
    }

    /// Single-token prompt carrying an explicit vector.
    pub fn from_cond(token: usize, cond: Tensor) -> Self {
        let d = cond.len();
        Self {
            tokens: vec![token],
            vectors: cond.clone().reshape(&[1, d]).unwrap(),
            cond,
        }
    }

    /// Pooled conditioning vector.
    pub fn cond(&self) -> &Tensor {
        &self.cond
    }

    pub fn is_null(&self) -> bool {
        self.tokens.iter().all(|&t| t == NULL_TOKEN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    /// Conv channel width.
    pub width: usize,
    pub embed_width: usize,
    pub time_width: usize,
    /// Hidden width of the conditioning MLP.
    pub cond_hidden: usize,
    /// Prompt vocabulary size, including the null token.
    pub vocab: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 32,
            embed_width: 32,
            time_width: 32,
            cond_hidden: 64,
            vocab: 3,
            seed: 0,
        }
    }
}

/// Small conditional convolutional ε-predictor.
///
/// ```text
/// c  = silu(W_c [sinusoid(t); cond] + b_c)
/// h1 = silu(conv3x3(z)            + P1 c)      full resolution
/// h2 = silu(conv3x3/2(h1)         + P2 c)      half resolution
/// h3 = silu(conv3x3(h2)           + P3 c + G pool(h2))
/// ε  = conv3x3(upsample(h3) + h1)
/// ```
///
/// The conditioning vector is broadcast over space; adding `P_i c` per
/// channel is the same map as concatenating the broadcast vector as extra
/// input channels behind a 1x1 kernel. `pool` is the spatial mean, which
/// gives the bottleneck whole-image context.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub embedding: EmbeddingTable,
    cond_in: Dense,
    proj: [Dense; 3],
    global: Dense,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    conv_out: Conv2d,
    act: Activation,
}

pub struct DenoiserTape {
    latent_shape: Vec<usize>,
    time_width: usize,
    cond_in: DenseCache,
    cond_pre: Tensor,
    proj: [DenseCache; 3],
    global: DenseCache,
    h2_shape: Vec<usize>,
    conv1: Conv2dCache,
    act1: ActivationCache,
    conv2: Conv2dCache,
    act2: ActivationCache,
    conv3: Conv2dCache,
    act3: ActivationCache,
    h3_shape: Vec<usize>,
    conv_out: Conv2dCache,
}

/// Gradients in the order of [`ParamSet::params_mut`].
pub type DenoiserGrads = Vec<Tensor>;

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Self {
        let mut rng = Rng::with_stream(config.seed, 1);
        let w = config.width;
        let ch = config.cond_hidden;
        let mut conv_out = Conv2d::init(&mut rng, w, 1, 3, 1);
        conv_out.weight = conv_out.weight.scale(0.1);
        Self {
            embedding: EmbeddingTable::init(&mut rng, config.vocab, config.embed_width),
            cond_in: Dense::init(&mut rng, config.time_width + config.embed_width, ch),
            proj: [
                Dense::init(&mut rng, ch, w),
                Dense::init(&mut rng, ch, w),
                Dense::init(&mut rng, ch, w),
            ],
            global: Dense::init(&mut rng, w, w),
            conv1: Conv2d::init(&mut rng, 1, w, 3, 1),
            conv2: Conv2d::init(&mut rng, w, w, 3, 2),
            conv3: Conv2d::init(&mut rng, w, w, 3, 1),
            conv_out,
            act: Activation::new(Nonlinearity::Silu),
            config,
        }
    }

    pub fn prompt(&self, tokens: &[usize]) -> Result<PromptEmbedding> {
        if tokens.is_empty() {
            return Err(arg_err!("empty prompt"));
        }
        let rows = tokens
            .iter()
            .map(|&t| self.embedding.lookup(t))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = rows.iter().collect();
        PromptEmbedding::from_vectors(tokens.to_vec(), Tensor::stack_rows(&refs)?)
    }

    pub fn null_prompt(&self) -> PromptEmbedding {
        self.prompt(&[NULL_TOKEN]).expect("null token is in vocabulary")
    }

    fn cond_input(&self, timestep: usize, cond: &Tensor) -> Result<Tensor> {
        if cond.len() != self.config.embed_width {
            return Err(shape_err!(
                "conditioning width {} (expected {})",
                cond.len(),
                self.config.embed_width
            ));
        }
        let temb = ops::sinusoidal_embedding(timestep as f64, self.config.time_width);
        Ok(Tensor::concat(&[&temb, cond]))
    }

    /// Full backward pass: parameter gradients (embedding table excluded,
    /// see [`Denoiser::backward_with_cond`]) plus the conditioning gradient.
    pub fn backward(&self, tape: &DenoiserTape, grad_eps: &Tensor) -> Result<(DenoiserGrads, Tensor)> {
        self.backward_inner(tape, grad_eps, true)
    }

    fn backward_inner(
        &self,
        tape: &DenoiserTape,
        grad_eps: &Tensor,
        want_params: bool,
    ) -> Result<(DenoiserGrads, Tensor)> {
        if grad_eps.shape() != tape.latent_shape.as_slice() {
            return Err(shape_err!(
                "gradient {:?} for latent {:?}",
                grad_eps.shape(),
                tape.latent_shape
            ));
        }
        let (h, w) = grad_eps.dims2()?;
        let g = grad_eps.clone().reshape(&[1, h, w])?;
        let mut grads: Vec<Tensor> = Vec::new();
        let bw = |layer: &Conv2d, cache: &Conv2dCache, g: &Tensor, out: &mut Vec<Tensor>| -> Result<Tensor> {
            if want_params {
                let (gi, gp) = layer.backward(cache, g)?;
                out.extend(gp);
                Ok(gi)
            } else {
                layer.backward_input(cache, g)
            }
        };
        let mut conv_grads: [Vec<Tensor>; 4] = Default::default();
        let g_u = bw(&self.conv_out, &tape.conv_out, &g, &mut conv_grads[3])?;
        let g_h3 = ops::upsample2_backward(&g_u)?;
        debug_assert_eq!(g_h3.shape(), tape.h3_shape.as_slice());
        let g_a3 = self.act.backward(&tape.act3, &g_h3)?.0;
        let g_b3 = ops::channel_sums(&g_a3)?;
        let mut g_h2 = bw(&self.conv3, &tape.conv3, &g_a3, &mut conv_grads[2])?;
        let mut global_grads = Vec::new();
        let g_pool = if want_params {
            let (gi, gp) = self.global.backward(&tape.global, &g_b3)?;
            global_grads = gp;
            gi
        } else {
            self.global.backward_input(&tape.global, &g_b3)?
        };
        g_h2.axpy(1.0, &ops::global_avg_pool_backward(&g_pool, &tape.h2_shape)?)?;
        let g_a2 = self.act.backward(&tape.act2, &g_h2)?.0;
        let g_b2 = ops::channel_sums(&g_a2)?;
        let mut g_h1 = bw(&self.conv2, &tape.conv2, &g_a2, &mut conv_grads[1])?;
        g_h1.axpy(1.0, &g_u)?;
        let g_a1 = self.act.backward(&tape.act1, &g_h1)?.0;
        let g_b1 = ops::channel_sums(&g_a1)?;
        if want_params {
            conv_grads[0] = self.conv1.backward(&tape.conv1, &g_a1)?.1;
        }
        let mut g_c = Tensor::zeros(&[self.config.cond_hidden]);
        let mut proj_grads = Vec::new();
        for (i, gb) in [g_b1, g_b2, g_b3].iter().enumerate() {
            if want_params {
                let (gi, gp) = self.proj[i].backward(&tape.proj[i], gb)?;
                proj_grads.extend(gp);
                g_c.axpy(1.0, &gi)?;
            } else {
                g_c.axpy(1.0, &self.proj[i].backward_input(&tape.proj[i], gb)?)?;
            }
        }
        let g_pre = tape.cond_pre.map(|v| Nonlinearity::Silu.derivative(v)).mul(&g_c)?;
        let g_in = if want_params {
            let (gi, gp) = self.cond_in.backward(&tape.cond_in, &g_pre)?;
            grads.extend(gp);
            gi
        } else {
            self.cond_in.backward_input(&tape.cond_in, &g_pre)?
        };
        if want_params {
            grads.extend(proj_grads);
            grads.extend(global_grads);
            for cg in conv_grads {
                grads.extend(cg);
            }
        }
        let g_cond = Tensor::vector(g_in.data()[tape.time_width..].to_vec());
        Ok((grads, g_cond))
    }

    /// Gradients for every parameter in [`ParamSet`] order when the
    /// conditioning vector was the embedding row of `token`.
    pub fn backward_with_cond(&self, tape: &DenoiserTape, grad_eps: &Tensor, token: usize) -> Result<DenoiserGrads> {
        let (rest, g_cond) = self.backward(tape, grad_eps)?;
        let mut g_table = Tensor::zeros(self.embedding.table.shape());
        let d = self.config.embed_width;
        g_table.data_mut()[token * d..(token + 1) * d].copy_from_slice(g_cond.data());
        let mut all = Vec::with_capacity(rest.len() + 1);
        all.push(g_table);
        all.extend(rest);
        Ok(all)
    }
}

impl NoisePredictor for Denoiser {
    type Tape = DenoiserTape;

    fn cond_width(&self) -> usize {
        self.config.embed_width
    }

    fn null_cond(&self) -> Tensor {
        self.null_prompt().cond().clone()
    }

    fn predict_taped(&self, z: &Tensor, timestep: usize, cond: &Tensor) -> Result<(Tensor, DenoiserTape)> {
        let (h, w) = z.dims2()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("denoiser needs even latent extents, got {h}x{w}"));
        }
        let c_in = self.cond_input(timestep, cond)?;
        let (cond_pre, cond_in) = self.cond_in.forward(&c_in)?;
        let c = cond_pre.map(|v| Nonlinearity::Silu.apply(v));
        let (b1, p1) = self.proj[0].forward(&c)?;
        let (b2, p2) = self.proj[1].forward(&c)?;
        let (b3, p3) = self.proj[2].forward(&c)?;

        let x = z.clone().reshape(&[1, h, w])?;
        let (a1, conv1) = self.conv1.forward(&x)?;
        let (h1, act1) = self.act.forward(&ops::add_channel_bias(&a1, &b1)?)?;
        let (a2, conv2) = self.conv2.forward(&h1)?;
        let (h2, act2) = self.act.forward(&ops::add_channel_bias(&a2, &b2)?)?;
        let (bg, global) = self.global.forward(&ops::global_avg_pool(&h2)?)?;
        let (a3, conv3) = self.conv3.forward(&h2)?;
        let (h3, act3) = self.act.forward(&ops::add_channel_bias(&a3, &b3.add(&bg)?)?)?;
        let mut u = ops::upsample2(&h3)?;
        u.axpy(1.0, &h1)?;
        let (eps, conv_out) = self.conv_out.forward(&u)?;
        let tape = DenoiserTape {
            latent_shape: vec![h, w],
            time_width: self.config.time_width,
            cond_in,
            cond_pre,
            proj: [p1, p2, p3],
            global,
            h2_shape: h2.shape().to_vec(),
            conv1,
            act1,
            conv2,
            act2,
            conv3,
            act3,
            h3_shape: h3.shape().to_vec(),
            conv_out,
        };
        Ok((eps.reshape(&[h, w])?, tape))
    }

    fn cond_vjp(&self, tape: &DenoiserTape, grad_eps: &Tensor) -> Result<Tensor> {
        Ok(self.backward_inner(tape, grad_eps, false)?.1)
    }
}

impl ParamSet for Denoiser {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embedding.table".into(), &self.embedding.table)];
        out.extend(prefixed("cond_in", self.cond_in.params()));
        for (i, p) in self.proj.iter().enumerate() {
            out.extend(prefixed(&format!("proj{}", i + 1), p.params()));
        }
        out.extend(prefixed("global", self.global.params()));
        out.extend(prefixed("conv1", self.conv1.params()));
        out.extend(prefixed("conv2", self.conv2.params()));
        out.extend(prefixed("conv3", self.conv3.params()));
        out.extend(prefixed("conv_out", self.conv_out.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embedding.table];
        out.extend(self.cond_in.params_mut().into_iter().map(|p| p.1));
        for p in self.proj.iter_mut() {
            out.extend(p.params_mut().into_iter().map(|p| p.1));
        }
        out.extend(self.global.params_mut().into_iter().map(|p| p.1));
        for c in [&mut self.conv1, &mut self.conv2, &mut self.conv3, &mut self.conv_out] {
            out.extend(c.params_mut().into_iter().map(|p| p.1));
        }
        out
    }
}

/// Predicts zero noise everywhere; DDIM reduces to pure rescaling.
#[derive(Clone, Copy, Debug)]
pub struct ZeroDenoiser {
    pub cond_width: usize,
}

impl NoisePredictor for ZeroDenoiser {
    type Tape = ();

    fn cond_width(&self) -> usize {
        self.cond_width
    }

    fn predict_taped(&self, z: &Tensor, _timestep: usize, _cond: &Tensor) -> Result<(Tensor, ())> {
        Ok((Tensor::zeros(z.shape()), ()))
    }

    fn cond_vjp(&self, _tape: &(), _grad_eps: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&[self.cond_width]))
    }
}
