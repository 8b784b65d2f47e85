//! Per-step embedding optimization (null-text inversion and its
//! prompt-initialized variant).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::schedule::{phi_copy, EmbeddingSchedule, InitMode};
use crate::diffusion::{
    ddim_coefficients, ddim_invert, encode_image, LatentTrajectory, NoisePredictor, NoiseSchedule, PromptEmbedding,
};
use crate::error::{arg_err, Error, Result};
use crate::numerics::{Adam, AdamConfig, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Inner iterations per sampling step.
    pub iters: usize,
    pub lr: f64,
    /// Early exit once the step loss drops below this.
    pub tol: f64,
    /// Guidance scale used during optimization and reconstruction.
    pub guidance: f64,
    pub init_mode: InitMode,
    pub optimizer: InnerOptimizer,
}

/// Update rule of the inner loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    /// Plain gradient descent, `φ ← φ − lr ∇L`.
    #[default]
    Gd,
    Adam,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iters: 10,
            lr: 1e-2,
            tol: 1e-5,
            guidance: 7.5,
            init_mode: InitMode::NullInit,
            optimizer: InnerOptimizer::Gd,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub phi: Tensor,
    /// `z̄` after this sampling step under `phi`.
    pub z_next: Tensor,
    pub loss: f64,
    pub initial_loss: f64,
    /// Gradient updates performed.
    pub iters: usize,
}

/// Optimize the unconditional embedding of sampling step `k` so that the
/// guided step from `z_bar` lands on the pivot latent `z_target`.
///
/// The loss is the squared Euclidean distance. The returned embedding is the best
/// iterate seen, so `loss <= initial_loss`.
#[allow(clippy::too_many_arguments)]
pub fn optimize_embedding_at_t<M: NoisePredictor>(
    model: &M,
    schedule: &NoiseSchedule,
    z_bar: &Tensor,
    z_target: &Tensor,
    k: usize,
    prompt: &PromptEmbedding,
    phi_init: &Tensor,
    config: &OptimizeConfig,
) -> Result<StepOutcome> {
    let steps = schedule.steps();
    if k == 0 || k > steps {
        return Err(arg_err!("sampling step {k} outside 1..={steps}"));
    }
    z_bar.same_shape(z_target)?;
    let level = steps + 1 - k;
    let ts = schedule.timestep(level);
    let (a, b) = ddim_coefficients(schedule.level_alpha_bar(level), schedule.level_alpha_bar(level - 1));
    let w = config.guidance;
    let eps_c = model.predict(z_bar, ts, prompt.cond())?;
    // z_next(φ) = a z̄ + b ((1 - w) ε_u(φ) + w ε_c)
    let mut base = z_bar.scale(a);
    base.axpy(b * w, &eps_c)?;

    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut phi = phi_init.clone();
    let mut best: Option<(Tensor, Tensor, f64)> = None;
    let mut initial_loss = f64::NAN;
    let mut iters = 0;
    loop {
        let (eps_u, tape) = model.predict_taped(z_bar, ts, &phi)?;
        let mut z_next = base.clone();
        z_next.axpy(b * (1.0 - w), &eps_u)?;
        let resid = z_next.sub(z_target)?;
        let loss = resid.sum_sq();
        if !loss.is_finite() {
            return Err(Error::Divergence {
                t: level,
                what: format!("embedding loss is {loss}"),
            });
        }
        if iters == 0 {
            initial_loss = loss;
        }
        if best.as_ref().map_or(true, |(_, _, l)| loss < *l) {
            best = Some((phi.clone(), z_next, loss));
        }
        if loss < config.tol || iters == config.iters {
            break;
        }
        let g_eps = resid.scale(2.0 * b * (1.0 - w));
        let g_phi = model.cond_vjp(&tape, &g_eps)?;
        match config.optimizer {
            InnerOptimizer::Gd => phi.axpy(-config.lr, &g_phi)?,
            InnerOptimizer::Adam => adam.step(vec![&mut phi], &[g_phi])?,
        }
        iters += 1;
    }
    let (phi, z_next, loss) = best.expect("at least one evaluation");
    Ok(StepOutcome {
        phi,
        z_next,
        loss,
        initial_loss,
        iters,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub initial: f64,
    pub last: f64,
    pub iters: usize,
}

#[derive(Clone, Debug)]
pub struct InversionOutput {
    pub schedule: EmbeddingSchedule,
    pub trajectory: LatentTrajectory,
    /// Wall time of inversion plus optimization.
    pub seconds: f64,
    pub losses: Vec<StepLoss>,
}

pub fn init_embedding<M: NoisePredictor>(model: &M, prompt: &PromptEmbedding, mode: InitMode) -> Tensor {
    match mode {
        InitMode::NullInit => model.null_cond(),
        InitMode::PromptInit => prompt.cond().clone(),
    }
}

/// DDIM-invert `x_ori`, then optimize the first `endpoint` sampling steps'
/// embeddings (all `T` when `None`) and fill the rest by φ-copy.
///
/// `endpoint = Some(0)` or `iters = 0` performs no optimization: every step
/// gets the initial embedding.
pub fn invert_with_optimization<M: NoisePredictor>(
    x_ori: &Tensor,
    prompt: &PromptEmbedding,
    endpoint: Option<usize>,
    model: &M,
    schedule: &NoiseSchedule,
    config: &OptimizeConfig,
) -> Result<InversionOutput> {
    let start = Instant::now();
    let trajectory = ddim_invert(&encode_image(x_ori)?, prompt, model, schedule)?;
    let mut out = optimize_along(trajectory, prompt, endpoint, model, schedule, config)?;
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// The optimization half of [`invert_with_optimization`], for a pivot
/// trajectory that is already available. `seconds` covers only this call.
pub fn optimize_along<M: NoisePredictor>(
    trajectory: LatentTrajectory,
    prompt: &PromptEmbedding,
    endpoint: Option<usize>,
    model: &M,
    schedule: &NoiseSchedule,
    config: &OptimizeConfig,
) -> Result<InversionOutput> {
    let steps = schedule.steps();
    if let Some(e) = endpoint {
        if e > steps {
            return Err(arg_err!("endpoint {e} beyond {steps} steps"));
        }
    }
    if trajectory.steps() != steps {
        return Err(arg_err!(
            "trajectory has {} steps, schedule {steps}",
            trajectory.steps()
        ));
    }
    let start = Instant::now();
    let init = init_embedding(model, prompt, config.init_mode);
    let limit = endpoint.unwrap_or(steps);

    let mut losses = Vec::new();
    let mut emb = if limit == 0 || config.iters == 0 {
        let mut s = EmbeddingSchedule::constant(init, steps);
        s.endpoint = endpoint;
        s
    } else {
        let mut phis = Vec::with_capacity(limit);
        let mut z_bar = trajectory.z_t().clone();
        let mut phi = init;
        for k in 1..=limit {
            let out = optimize_embedding_at_t(
                model,
                schedule,
                &z_bar,
                trajectory.at_progress(k),
                k,
                prompt,
                &phi,
                config,
            )?;
            losses.push(StepLoss {
                step: k,
                initial: out.initial_loss,
                last: out.loss,
                iters: out.iters,
            });
            phi = out.phi;
            z_bar = out.z_next;
            phis.push(phi.clone());
        }
        let mut s = phi_copy(&phis, limit, steps)?;
        if endpoint.is_none() {
            s.endpoint = None;
        }
        s
    };
    emb.init_mode = config.init_mode;
    Ok(InversionOutput {
        schedule: emb,
        trajectory,
        seconds: start.elapsed().as_secs_f64(),
        losses,
    })
}
