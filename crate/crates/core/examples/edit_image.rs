//! Prompt-swap editing: invert a smooth image under its own token and sample
//! it back under the texture token, once per method. Writes one PGM each.
//!
//! ```text
//! cargo run --release --example edit_image -- [out/denoiser] [out/estimator]
//! ```

use std::path::PathBuf;

use waveopt::diffusion::{Denoiser, NoiseSchedule};
use waveopt::estimator::WaveOptEstimator;
use waveopt::inversion::{psnr, OptimizeConfig};
use waveopt::io::pgm;
use waveopt::pipeline::{edit, gen_corpus, CorpusSpec, EditConfig, Method, Split};
use waveopt::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "out/denoiser".into()));
    let est_dir = PathBuf::from(args.next().unwrap_or_else(|| "out/estimator".into()));
    let (model, schedule_cfg) = Denoiser::load(&dir)?;
    let schedule = NoiseSchedule::new(schedule_cfg.unwrap_or_default())?;
    // Methods that need an estimator are skipped when none has been trained.
    let estimator = WaveOptEstimator::load(&est_dir).ok();

    let spec = CorpusSpec::default();
    let corpus = gen_corpus(&spec)?;
    let im = corpus
        .split(Split::Test)
        .find(|im| im.class == 0)
        .expect("a smooth test image");
    let texture = spec.classes[1].token;
    let p_src = model.prompt(&[im.token])?;
    let p_edit = model.prompt(&[texture])?;
    let config = EditConfig {
        optimize: OptimizeConfig::default(),
        margin: 3,
    };

    let out = dir.parent().map(PathBuf::from).unwrap_or_default().join("edits");
    pgm::save(&out.join("source.pgm"), &im.image)?;
    for method in Method::ALL {
        if method.uses_estimator() && estimator.is_none() {
            println!("{method:<8} skipped (no estimator in {})", est_dir.display());
            continue;
        }
        let (edited, report) = edit(
            &im.image,
            &p_src,
            &p_edit,
            method,
            &model,
            &schedule,
            estimator.as_ref(),
            &config,
        )?;
        let (recon, _) = edit(
            &im.image,
            &p_src,
            &p_src,
            method,
            &model,
            &schedule,
            estimator.as_ref(),
            &config,
        )?;
        println!(
            "{method:<8} endpoint {:>4}  reconstruction {:5.2} dB  inversion {:.2}s",
            report.endpoint.map_or("-".into(), |t| t.to_string()),
            psnr(&im.image, &recon)?,
            report.charged_seconds()
        );
        pgm::save(&out.join(format!("{}.pgm", method.name().replace('+', "_"))), &edited)?;
    }
    println!("images in {}", out.display());
    Ok(())
}
