//! Ground-truth endpoints for the whole corpus (stride-1 scans), then the
//! endpoint estimator trained on (image, wavelet views, latent) pairs.
//!
//! The dataset is cached next to the denoiser, so a second run only trains.
//!
//! ```text
//! cargo run --release --example train_estimator -- [out/denoiser]
//! ```

use std::path::PathBuf;

use waveopt::diffusion::{Denoiser, NoiseSchedule};
use waveopt::estimator::{train_estimator_with_eval, EstimatorConfig, EstimatorTrainConfig, WaveOptEstimator};
use waveopt::inversion::{InitMode, OptimizeConfig};
use waveopt::pipeline::{build_dataset, class_summaries, gen_corpus, CorpusSpec, Dataset, DatasetConfig, Split};
use waveopt::wavelet::EqualizeConfig;
use waveopt::Result;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/denoiser".into()));
    let root = dir.parent().map(PathBuf::from).unwrap_or_default();
    let (model, schedule_cfg) = Denoiser::load(&dir)?;
    let schedule = NoiseSchedule::new(schedule_cfg.unwrap_or_default())?;
    let spec = CorpusSpec::default();

    let ds_dir = root.join("dataset");
    let ds = if ds_dir.join("dataset.json").exists() {
        Dataset::load(&ds_dir)?
    } else {
        let cfg = DatasetConfig {
            optimize: OptimizeConfig {
                init_mode: InitMode::PromptInit,
                ..OptimizeConfig::default()
            },
            threshold: 0.9,
            equalize: EqualizeConfig::default(),
        };
        let ds = build_dataset(&gen_corpus(&spec)?, &model, &schedule, &cfg)?;
        ds.save(&ds_dir)?;
        ds
    };
    for s in class_summaries(&ds.records)? {
        println!(
            "{:<8} mean t* {:5.1}  E(x_LL) {:8.3}  E(x_SUM) {:.4}",
            spec.classes[s.class].name, s.mean_t_star, s.mean_energy_ll, s.mean_energy_sum
        );
    }

    let (train, val, test) = (ds.pairs(Split::Train)?, ds.pairs(Split::Val)?, ds.pairs(Split::Test)?);
    println!("pairs: {} train, {} val, {} test", train.len(), val.len(), test.len());
    let mut estimator = WaveOptEstimator::new(EstimatorConfig {
        latent_size: spec.size,
        steps: schedule.steps(),
        ..EstimatorConfig::default()
    })?;
    // Start from the mean training endpoint.
    let train_t: Vec<f64> = ds
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.t_star as f64)
        .collect();
    estimator.set_endpoint_prior(train_t.iter().sum::<f64>() / train_t.len() as f64);

    let (estimator, metrics) =
        train_estimator_with_eval(estimator, &train, &val, Some(&test), &EstimatorTrainConfig::default())?;
    for m in metrics.epochs.iter().filter(|m| m.epoch % 5 == 0 || m.epoch == 1) {
        println!(
            "epoch {:>3}  train MAE {:5.2}  val MAE {:5.2}  test MAE {:5.2}",
            m.epoch, m.train_mae, m.val_mae, m.test_mae
        );
    }
    println!("kept epoch {}", metrics.best_epoch);
    estimator.save(&root.join("estimator"))?;
    Ok(())
}
