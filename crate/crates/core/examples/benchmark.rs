//! All five methods on the held-out split: PSNR ratio against full
//! null-init optimization, SSIM and charged inversion time.
//!
//! ```text
//! cargo run --release --example benchmark -- [out/denoiser] [out/estimator]
//! ```

use std::path::PathBuf;

use waveopt::diffusion::{Denoiser, NoiseSchedule};
use waveopt::estimator::WaveOptEstimator;
use waveopt::inversion::OptimizeConfig;
use waveopt::pipeline::{benchmark, gen_corpus, BenchImage, CorpusSpec, EditConfig, Method, Split};
use waveopt::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "out/denoiser".into()));
    let est_dir = PathBuf::from(args.next().unwrap_or_else(|| "out/estimator".into()));
    let (model, schedule_cfg) = Denoiser::load(&dir)?;
    let schedule = NoiseSchedule::new(schedule_cfg.unwrap_or_default())?;
    let estimator = WaveOptEstimator::load(&est_dir)?;

    let corpus = gen_corpus(&CorpusSpec::default())?;
    let images: Vec<BenchImage> = corpus
        .images
        .iter()
        .enumerate()
        .filter(|(_, im)| im.split == Split::Test)
        .map(|(index, im)| BenchImage {
            index,
            class: im.class,
            token: im.token,
            image: im.image.clone(),
        })
        .collect();
    let config = EditConfig {
        optimize: OptimizeConfig::default(),
        margin: 3,
    };
    let report = benchmark(&images, &Method::ALL, &model, &schedule, Some(&estimator), &config)?;

    println!(
        "{:<8} {:>10} {:>8} {:>9} {:>9}",
        "method", "PSNR ratio", "SSIM", "time (s)", "mean t*"
    );
    for row in &report.rows {
        println!(
            "{:<8} {:>10.3} {:>8.4} {:>9.2} {:>9}",
            row.method.name(),
            row.psnr_ratio,
            row.ssim,
            row.seconds,
            row.mean_endpoint.map_or("-".into(), |t| format!("{t:.1}"))
        );
    }
    Ok(())
}
