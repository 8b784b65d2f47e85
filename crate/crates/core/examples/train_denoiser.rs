//! Train the toy conditional noise predictor on the synthetic corpus and save
//! a checkpoint that the other examples load.
//!
//! ```text
//! cargo run --release --example train_denoiser -- [out/denoiser]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use waveopt::diffusion::{
    train_denoiser, Denoiser, DenoiserConfig, DenoiserTrainConfig, NoiseSchedule, ScheduleConfig,
};
use waveopt::numerics::ParamSet;
use waveopt::pipeline::{gen_corpus, CorpusSpec};
use waveopt::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/denoiser".into()));
    let corpus = gen_corpus(&CorpusSpec::default())?;
    let schedule_cfg = ScheduleConfig::default();
    let schedule = NoiseSchedule::new(schedule_cfg)?;

    // The test split stays unseen.
    let (latents, tokens) = corpus.denoiser_set()?;

    let mut model = Denoiser::new(DenoiserConfig::default());
    println!("{} parameters, {} training images", model.param_count(), latents.len());
    let start = Instant::now();
    let report = train_denoiser(
        &mut model,
        &latents,
        &tokens,
        &schedule,
        &DenoiserTrainConfig::default(),
    )?;
    for p in &report.curve {
        println!("step {:>5}  train {:.4}  eval {:.4}", p.step, p.train_loss, p.eval_loss);
    }
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    model.save(&out, &schedule_cfg)?;
    println!("saved to {}", out.display());
    Ok(())
}
