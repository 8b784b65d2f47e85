//! ε-prediction training and denoiser checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Denoiser, NoisePredictor, NULL_TOKEN};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::error::{arg_err, Error, Result};
use crate::io::checkpoint;
use crate::numerics::{Adam, AdamConfig, ParamSet, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing the prompt with the null token.
    pub null_prob: f64,
    /// Size of the fixed evaluation set.
    pub eval_samples: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 8,
            lr: 2e-3,
            null_prob: 0.1,
            eval_samples: 64,
            log_every: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPoint {
    pub step: usize,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub eval_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub curve: Vec<TrainPoint>,
}

struct Sample {
    image: usize,
    timestep: usize,
    noise: Tensor,
    token: usize,
}

fn draw(rng: &mut Rng, latents: &[Tensor], tokens: &[usize], train_steps: usize, null_prob: f64) -> Result<Sample> {
    let image = rng.below(latents.len());
    let timestep = 1 + rng.below(train_steps);
    let noise = rng.fill_normal(latents[image].shape())?;
    let token = if rng.uniform() < null_prob {
        NULL_TOKEN
    } else {
        tokens[image]
    };
    Ok(Sample {
        image,
        timestep,
        noise,
        token,
    })
}

fn noised(z0: &Tensor, noise: &Tensor, abar: f64) -> Result<Tensor> {
    let mut z = z0.scale(abar.sqrt());
    z.axpy((1.0 - abar).sqrt(), noise)?;
    Ok(z)
}

fn sample_loss(model: &Denoiser, s: &Sample, latents: &[Tensor], schedule: &NoiseSchedule) -> Result<f64> {
    let z = noised(&latents[s.image], &s.noise, schedule.alpha_bar(s.timestep))?;
    let cond = model.embedding.lookup(s.token)?;
    let eps = model.predict(&z, s.timestep, &cond)?;
    Ok(eps.sub(&s.noise)?.sum_sq() / eps.len() as f64)
}

fn eval_loss(model: &Denoiser, set: &[Sample], latents: &[Tensor], schedule: &NoiseSchedule) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        total += sample_loss(model, s, latents, schedule)?;
    }
    Ok(total / set.len() as f64)
}

/// Train `model` in place on encoded latents paired with prompt tokens.
/// Parameters are rounded to `f32` at the end so the checkpoint is exact.
pub fn train_denoiser(
    model: &mut Denoiser,
    latents: &[Tensor],
    tokens: &[usize],
    schedule: &NoiseSchedule,
    config: &DenoiserTrainConfig,
) -> Result<DenoiserTrainReport> {
    if latents.is_empty() {
        return Err(arg_err!("empty training corpus"));
    }
    if latents.len() != tokens.len() {
        return Err(arg_err!("{} images but {} prompts", latents.len(), tokens.len()));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= model.config.vocab) {
        return Err(arg_err!("prompt token {t} outside vocabulary"));
    }
    if config.batch == 0 {
        return Err(arg_err!("batch size must be positive"));
    }
    let mut eval_rng = Rng::with_stream(config.seed, 11);
    let eval_set = (0..config.eval_samples.max(1))
        .map(|_| draw(&mut eval_rng, latents, tokens, schedule.train_steps(), 0.0))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = eval_loss(model, &eval_set, latents, schedule)?;

    let mut rng = Rng::with_stream(config.seed, 12);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut curve = Vec::new();
    let mut running = 0.0;
    let mut since = 0;
    for step in 1..=config.steps {
        let mut acc: Option<Vec<Tensor>> = None;
        let mut batch_loss = 0.0;
        for _ in 0..config.batch {
            let s = draw(&mut rng, latents, tokens, schedule.train_steps(), config.null_prob)?;
            let z = noised(&latents[s.image], &s.noise, schedule.alpha_bar(s.timestep))?;
            let cond = model.embedding.lookup(s.token)?;
            let (eps, tape) = model.predict_taped(&z, s.timestep, &cond)?;
            let diff = eps.sub(&s.noise)?;
            let n = diff.len() as f64;
            batch_loss += diff.sum_sq() / n;
            let g = diff.scale(2.0 / (n * config.batch as f64));
            let grads = model.backward_with_cond(&tape, &g, s.token)?;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&grads) {
                        x.axpy(1.0, y)?;
                    }
                }
            }
        }
        batch_loss /= config.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::TrainingFailure(format!("loss is {batch_loss} at step {step}")));
        }
        adam.step(model.params_mut(), &acc.expect("batch is nonempty"))?;
        running += batch_loss;
        since += 1;
        if step % config.log_every.max(1) == 0 || step == config.steps {
            curve.push(TrainPoint {
                step,
                train_loss: running / since as f64,
                eval_loss: eval_loss(model, &eval_set, latents, schedule)?,
            });
            running = 0.0;
            since = 0;
        }
    }
    model.quantize_params();
    let final_loss = eval_loss(model, &eval_set, latents, schedule)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingFailure("evaluation loss is not finite".into()));
    }
    Ok(DenoiserTrainReport {
        initial_loss,
        final_loss,
        curve,
    })
}

pub const DENOISER_KIND: &str = "denoiser";

impl Denoiser {
    pub fn save(&self, dir: &Path, schedule: &ScheduleConfig) -> Result<()> {
        let extra = serde_json::json!({ "schedule": schedule, "seed": self.config.seed });
        checkpoint::save_checkpoint(dir, DENOISER_KIND, &self.config, extra, self)?;
        Ok(())
    }

    /// Load a checkpoint; also returns the schedule stored alongside it.
    pub fn load(dir: &Path) -> Result<(Self, Option<ScheduleConfig>)> {
        let manifest = checkpoint::read_manifest(dir, DENOISER_KIND)?;
        let mut model = Denoiser::new(manifest.architecture()?);
        checkpoint::load_params(dir, &manifest, &mut model)?;
        let schedule = manifest
            .extra
            .get("schedule")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?;
        Ok((model, schedule))
    }
}
