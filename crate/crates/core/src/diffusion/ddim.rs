//! Classifier-free guidance and deterministic (η = 0) DDIM.
//!
//! Sampling executes steps `k = 1..=T`; step `k` moves the latent from level
//! `T - k + 1` to level `T - k` and uses `phis[k - 1]` as the unconditional
//! embedding.

use std::ops::Range;

use super::model::{NoisePredictor, PromptEmbedding};
use super::schedule::NoiseSchedule;
use crate::error::{arg_err, Error, Result};
use crate::inversion::EmbeddingSchedule;
use crate::numerics::Tensor;

/// `ε_u + w (ε_c - ε_u)`
pub fn guide(eps_uncond: &Tensor, eps_cond: &Tensor, w: f64) -> Result<Tensor> {
    let mut out = eps_uncond.clone();
    out.axpy(w, &eps_cond.sub(eps_uncond)?)?;
    Ok(out)
}

pub fn cfg_predict<M: NoisePredictor>(
    model: &M,
    z: &Tensor,
    timestep: usize,
    cond: &PromptEmbedding,
    uncond: &PromptEmbedding,
    w: f64,
) -> Result<Tensor> {
    let eps_c = model.predict(z, timestep, cond.cond())?;
    let eps_u = model.predict(z, timestep, uncond.cond())?;
    guide(&eps_u, &eps_c, w)
}

/// Deterministic DDIM update between two noise levels. With
/// `abar_prev > abar_t` this denoises; swapped, it is the inversion step.
pub fn ddim_step(z_t: &Tensor, eps: &Tensor, abar_t: f64, abar_prev: f64) -> Result<Tensor> {
    for a in [abar_t, abar_prev] {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Numeric(format!("alpha bar {a} outside (0, 1]")));
        }
    }
    let (a, b) = ddim_coefficients(abar_t, abar_prev);
    let mut out = z_t.scale(a);
    out.axpy(b, eps)?;
    Ok(out)
}

/// `(a, b)` with `ddim_step(z, ε) = a z + b ε`.
pub fn ddim_coefficients(abar_t: f64, abar_prev: f64) -> (f64, f64) {
    let a = (abar_prev / abar_t).sqrt();
    let b = (1.0 - abar_prev).sqrt() - a * (1.0 - abar_t).sqrt();
    (a, b)
}

/// Pivot trajectory `z_0 ..= z_T` from DDIM inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub latents: Vec<Tensor>,
    pub prompt: PromptEmbedding,
}

impl LatentTrajectory {
    pub fn steps(&self) -> usize {
        self.latents.len() - 1
    }

    pub fn z0(&self) -> &Tensor {
        &self.latents[0]
    }

    pub fn z_t(&self) -> &Tensor {
        self.latents.last().unwrap()
    }

    /// Latent the sampler should hold after `progress` sampling steps.
    pub fn at_progress(&self, progress: usize) -> &Tensor {
        &self.latents[self.steps() - progress]
    }
}

pub fn ddim_invert<M: NoisePredictor>(
    z0: &Tensor,
    prompt: &PromptEmbedding,
    model: &M,
    schedule: &NoiseSchedule,
) -> Result<LatentTrajectory> {
    let steps = schedule.steps();
    let mut latents = Vec::with_capacity(steps + 1);
    latents.push(z0.clone());
    for j in 0..steps {
        let z = &latents[j];
        let eps = model.predict(z, schedule.timestep(j + 1), prompt.cond())?;
        let next = ddim_step(z, &eps, schedule.level_alpha_bar(j), schedule.level_alpha_bar(j + 1))?;
        if !next.is_finite() {
            return Err(Error::Divergence {
                t: j + 1,
                what: "non-finite latent during inversion".into(),
            });
        }
        latents.push(next);
    }
    Ok(LatentTrajectory {
        latents,
        prompt: prompt.clone(),
    })
}

/// One guided sampling step `k` (1-based, execution order).
pub fn sample_step<M: NoisePredictor>(
    z: &Tensor,
    k: usize,
    prompt: &PromptEmbedding,
    phi: &Tensor,
    w: f64,
    model: &M,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let level = schedule.steps() + 1 - k;
    let ts = schedule.timestep(level);
    let eps_c = model.predict(z, ts, prompt.cond())?;
    // identical embeddings give identical predictions; skip the second pass
    let eps = if phi == prompt.cond() {
        eps_c
    } else {
        let eps_u = model.predict(z, ts, phi)?;
        guide(&eps_u, &eps_c, w)?
    };
    let next = ddim_step(
        z,
        &eps,
        schedule.level_alpha_bar(level),
        schedule.level_alpha_bar(level - 1),
    )?;
    if !next.is_finite() {
        return Err(Error::Divergence {
            t: level,
            what: "non-finite latent during sampling".into(),
        });
    }
    Ok(next)
}

/// Run sampling steps `range` (1-based, execution order) from `z`,
/// optionally returning every intermediate state (`states[i]` is the latent
/// after step `range.start + i`).
pub fn sample_steps<M: NoisePredictor>(
    z: &Tensor,
    range: Range<usize>,
    prompt: &PromptEmbedding,
    phis: &EmbeddingSchedule,
    w: f64,
    model: &M,
    schedule: &NoiseSchedule,
    keep_states: bool,
) -> Result<(Tensor, Vec<Tensor>)> {
    if phis.len() != schedule.steps() {
        return Err(arg_err!(
            "embedding schedule has {} entries for {} steps",
            phis.len(),
            schedule.steps()
        ));
    }
    let mut z = z.clone();
    let mut states = Vec::new();
    for k in range {
        z = sample_step(&z, k, prompt, phis.phi(k), w, model, schedule)?;
        if keep_states {
            states.push(z.clone());
        }
    }
    Ok((z, states))
}

pub fn ddim_sample<M: NoisePredictor>(
    z_t: &Tensor,
    prompt: &PromptEmbedding,
    phis: &EmbeddingSchedule,
    w: f64,
    model: &M,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let steps = schedule.steps();
    Ok(sample_steps(z_t, 1..steps + 1, prompt, phis, w, model, schedule, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::ZeroDenoiser;
    use crate::diffusion::schedule::ScheduleConfig;
    use crate::numerics::Rng;

    #[test]
    fn guidance_special_cases() {
        let u = Tensor::scalar(1.0);
        let c = Tensor::scalar(2.0);
        assert_eq!(guide(&u, &c, 1.0).unwrap(), c);
        assert_eq!(guide(&u, &c, 0.0).unwrap(), u);
        assert_eq!(guide(&u, &c, 7.5).unwrap().data()[0], 8.5);
    }

    #[test]
    fn step_closed_forms() {
        let z = Tensor::vector(vec![1.0, -2.0]);
        let zero = Tensor::zeros(&[2]);
        let out = ddim_step(&z, &zero, 0.3, 0.8).unwrap();
        let s = (0.8f64 / 0.3).sqrt();
        assert_eq!(out, z.scale(s));
        let e = Tensor::vector(vec![0.4, 0.1]);
        assert!(ddim_step(&z, &e, 0.6, 0.6).unwrap().max_abs_diff(&z).unwrap() < 1e-15);
        let one = ddim_step(&Tensor::scalar(1.0), &Tensor::scalar(1.0), 0.5, 1.0).unwrap();
        let x0 = (1.0 - 0.5f64.sqrt()) / 0.5f64.sqrt();
        assert!((x0 - 0.41421356).abs() < 1e-8);
        assert!((one.data()[0] - x0).abs() < 1e-12);
        assert!(ddim_step(&z, &e, 0.0, 0.5).is_err());
    }

    #[test]
    fn zero_denoiser_inversion_and_round_trip() {
        let sched = NoiseSchedule::new(ScheduleConfig::default()).unwrap();
        let m = ZeroDenoiser { cond_width: 4 };
        let p = PromptEmbedding::from_cond(1, Tensor::full(&[4], 0.3));
        let z0 = Rng::new(1).fill_normal(&[6, 6]).unwrap();
        let traj = ddim_invert(&z0, &p, &m, &sched).unwrap();
        assert_eq!(traj.latents.len(), 51);
        assert_eq!(traj.z0(), &z0);
        for j in 0..=50 {
            let expect = z0.scale(sched.level_alpha_bar(j).sqrt());
            assert!(traj.latents[j].max_abs_diff(&expect).unwrap() < 1e-12);
        }
        let phis = EmbeddingSchedule::constant(Tensor::zeros(&[4]), 50);
        let back = ddim_sample(traj.z_t(), &p, &phis, 1.0, &m, &sched).unwrap();
        assert!(back.max_abs_diff(&z0).unwrap() < 1e-9);
    }
}
