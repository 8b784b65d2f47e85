use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{loss_hinge, loss_l2, loss_total, mae};
use super::model::{EstimatorConfig, EstimatorInput, WaveOptEstimator};
use crate::error::{arg_err, Error, Result};
use crate::io::{checkpoint, write_csv};
use crate::numerics::{Adam, AdamConfig, ParamSet, Rng, Tensor};
use crate::wavelet::{frequency_profile, EqualizeConfig};

/// One estimator sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    /// Index of the source image in its corpus.
    pub image: usize,
    pub x_ori: Tensor,
    pub x_ll: Tensor,
    /// Equalized detail average.
    pub x_sum: Tensor,
    /// Pivot latent after `t` sampling steps.
    pub z_t: Tensor,
    pub t: usize,
    pub t_star_gt: usize,
    /// PSNR of the reconstruction truncated at `t`.
    pub psnr_t: f64,
    pub psnr_t_star: f64,
    /// PSNR of `z_t` decoded directly, the other reading of the hinge term.
    pub psnr_t_direct: f64,
}

impl TrainingPair {
    pub fn input(&self) -> EstimatorInput<'_> {
        EstimatorInput {
            x_ori: &self.x_ori,
            x_ll: &self.x_ll,
            x_sum: &self.x_sum,
            z_t: &self.z_t,
            t: self.t,
        }
    }

    pub fn remaining(&self) -> f64 {
        self.t_star_gt as f64 - self.t as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub a1: f64,
    pub a2: f64,
    pub seed: u64,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 16,
            lr: 1e-4,
            a1: 0.5,
            a2: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mae: f64,
    pub val_loss: f64,
    pub val_mae: f64,
    pub test_loss: f64,
    pub test_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose weights were returned (0 = initialization).
    pub best_epoch: usize,
}

impl EstimatorMetrics {
    pub fn at(&self, epoch: usize) -> Option<&EpochMetrics> {
        self.epochs.iter().find(|m| m.epoch == epoch)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .epochs
            .iter()
            .map(|m| {
                vec![
                    m.epoch.to_string(),
                    format!("{:.6}", m.train_loss),
                    format!("{:.6}", m.train_mae),
                    format!("{:.6}", m.val_loss),
                    format!("{:.6}", m.val_mae),
                    format!("{:.6}", m.test_loss),
                    format!("{:.6}", m.test_mae),
                ]
            })
            .collect();
        write_csv(
            path,
            &[
                "epoch",
                "train_loss",
                "train_mae",
                "val_loss",
                "val_mae",
                "test_loss",
                "test_mae",
            ],
            &rows,
        )
    }
}

fn pair_loss(pred: f64, p: &TrainingPair, cfg: &EstimatorTrainConfig) -> f64 {
    loss_total(
        loss_l2(pred, p.t_star_gt, p.t),
        loss_hinge(p.psnr_t_star, p.psnr_t),
        cfg.a1,
        cfg.a2,
    )
}

/// Mean loss and MAE of `model` over `pairs`.
pub fn evaluate(model: &WaveOptEstimator, pairs: &[TrainingPair], cfg: &EstimatorTrainConfig) -> Result<(f64, f64)> {
    let mut preds = Vec::with_capacity(pairs.len());
    let mut loss = 0.0;
    for p in pairs {
        let pred = model.predict(&p.input())?;
        loss += pair_loss(pred, p, cfg);
        preds.push(pred);
    }
    let gts: Vec<f64> = pairs.iter().map(TrainingPair::remaining).collect();
    Ok((loss / pairs.len() as f64, mae(&preds, &gts)?))
}

pub fn train_estimator(
    model: WaveOptEstimator,
    train: &[TrainingPair],
    val: &[TrainingPair],
    config: &EstimatorTrainConfig,
) -> Result<(WaveOptEstimator, EstimatorMetrics)> {
    train_estimator_with_eval(model, train, val, None, config)
}

/// Train with the combined loss; returns the weights with the lowest
/// validation MAE. Per-epoch metrics also cover `test` when given
/// (otherwise the test columns repeat validation).
pub fn train_estimator_with_eval(
    mut model: WaveOptEstimator,
    train: &[TrainingPair],
    val: &[TrainingPair],
    test: Option<&[TrainingPair]>,
    config: &EstimatorTrainConfig,
) -> Result<(WaveOptEstimator, EstimatorMetrics)> {
    if train.is_empty() || val.is_empty() {
        return Err(arg_err!("training and validation splits must be nonempty"));
    }
    if config.batch == 0 {
        return Err(arg_err!("batch size must be positive"));
    }
    let mut metrics = EstimatorMetrics::default();
    if config.epochs == 0 {
        return Ok((model, metrics));
    }
    let mut rng = Rng::with_stream(config.seed, 21);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (evaluate(&model, val, config)?.1, model.clone());
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut abs_sum = 0.0;
        for chunk in order.chunks(config.batch) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in chunk {
                let p = &train[i];
                let (pred, tape) = model.forward(&p.input())?;
                let loss = pair_loss(pred, p, config);
                if !loss.is_finite() {
                    return Err(Error::TrainingFailure(format!("loss is {loss} in epoch {epoch}")));
                }
                loss_sum += loss;
                abs_sum += (pred - p.remaining()).abs();
                // the hinge term does not depend on the weights
                let g = 2.0 * config.a1 * (pred - p.remaining()) / chunk.len() as f64;
                let grads = model.backward(&tape, g)?;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (x, y) in a.iter_mut().zip(&grads) {
                            x.axpy(1.0, y)?;
                        }
                    }
                }
            }
            adam.step(model.params_mut(), &acc.expect("chunks are nonempty"))?;
        }
        let (val_loss, val_mae) = evaluate(&model, val, config)?;
        let (test_loss, test_mae) = match test {
            Some(t) if !t.is_empty() => evaluate(&model, t, config)?,
            _ => (val_loss, val_mae),
        };
        metrics.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_mae: abs_sum / train.len() as f64,
            val_loss,
            val_mae,
            test_loss,
            test_mae,
        });
        if val_mae < best.0 {
            best = (val_mae, model.clone());
            metrics.best_epoch = epoch;
        }
    }
    let mut model = best.1;
    model.quantize_params();
    Ok((model, metrics))
}

/// `clamp(round(pred) + t_query + margin, 1, steps)`
pub fn endpoint_from_prediction(pred_remaining: f64, t_query: usize, margin: usize, steps: usize) -> usize {
    let raw = pred_remaining.round() + t_query as f64 + margin as f64;
    raw.clamp(1.0, steps as f64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointPrediction {
    /// Raw network output.
    pub pred_remaining: f64,
    pub t_star_used: usize,
}

/// Query the estimator with the latent `t_query` steps into sampling and
/// turn its output into the endpoint to optimize through.
pub fn predict_endpoint(
    model: &WaveOptEstimator,
    x_ori: &Tensor,
    z_query: &Tensor,
    t_query: usize,
    margin: usize,
) -> Result<EndpointPrediction> {
    let profile = frequency_profile(x_ori, &model.config.equalize)?;
    let pred = model.predict(&EstimatorInput {
        x_ori,
        x_ll: &profile.subbands.ll,
        x_sum: &profile.x_sum_equalized,
        z_t: z_query,
        t: t_query,
    })?;
    Ok(EndpointPrediction {
        pred_remaining: pred,
        t_star_used: endpoint_from_prediction(pred, t_query, margin, model.config.steps),
    })
}

/// Inference-time remaining steps, clamped to `[0, T - t]`.
pub fn predict_remaining(model: &WaveOptEstimator, input: &EstimatorInput) -> Result<f64> {
    let steps = model.config.steps as f64;
    Ok(model.predict(input)?.clamp(0.0, (steps - input.t as f64).max(0.0)))
}

/// The wavelet views the estimator expects for an image.
pub fn wavelet_views(x_ori: &Tensor, eq: &EqualizeConfig) -> Result<(Tensor, Tensor)> {
    let p = frequency_profile(x_ori, eq)?;
    Ok((p.subbands.ll, p.x_sum_equalized))
}

pub const ESTIMATOR_KIND: &str = "waveopt-estimator";

impl WaveOptEstimator {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let extra = serde_json::json!({ "seed": self.config.seed });
        checkpoint::save_checkpoint(dir, ESTIMATOR_KIND, &self.config, extra, self)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir, ESTIMATOR_KIND)?;
        let config: EstimatorConfig = manifest.architecture()?;
        let mut model = WaveOptEstimator::new(config)?;
        checkpoint::load_params(dir, &manifest, &mut model)?;
        Ok(model)
    }
}
