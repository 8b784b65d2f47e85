//! Truncated-optimization scan: optimize every step once, then rebuild the
//! image with the embedding of step t* copied to all later steps, for t* on a
//! stride-5 grid. The endpoint is the first t* whose PSNR ratio against the
//! untruncated reconstruction exceeds 0.9.
//!
//! ```text
//! cargo run --release --example endpoint_scan -- [out/denoiser] [images per class]
//! ```

use std::path::PathBuf;

use waveopt::diffusion::{Denoiser, NoiseSchedule};
use waveopt::inversion::{endpoint_scan, InitMode, OptimizeConfig};
use waveopt::pipeline::{gen_corpus, CorpusSpec};
use waveopt::wavelet::{frequency_profile, EqualizeConfig};
use waveopt::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "out/denoiser".into()));
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let (model, schedule_cfg) = Denoiser::load(&dir)?;
    let schedule = NoiseSchedule::new(schedule_cfg.unwrap_or_default())?;
    let spec = CorpusSpec::default();
    let corpus = gen_corpus(&spec)?;
    let config = OptimizeConfig {
        init_mode: InitMode::PromptInit,
        ..OptimizeConfig::default()
    };

    for (c, class) in spec.classes.iter().enumerate() {
        for im in corpus.images.iter().filter(|im| im.class == c).take(per_class) {
            let prompt = model.prompt(&[im.token])?;
            let scan = endpoint_scan(&im.image, &prompt, 5, 0.9, &model, &schedule, &config)?;
            let profile = frequency_profile(&im.image, &EqualizeConfig::default())?;
            println!(
                "{:<8} E(x_SUM) {:.4}  t* = {:>2}{}  ({:.1}s)",
                class.name,
                profile.energy_sum,
                scan.endpoint.t,
                if scan.endpoint.crossed { "" } else { " (no crossing)" },
                scan.total_seconds
            );
            let curve: Vec<String> = scan
                .grid
                .iter()
                .zip(&scan.ratios)
                .map(|(t, r)| format!("{t}:{r:.2}"))
                .collect();
            println!("  {}", curve.join(" "));
        }
    }
    Ok(())
}
