//! DDIM inversion and reconstruction of one image per class: plain inversion
//! at w = 1, guided sampling without optimization, and full per-step embedding
//! optimization from both initializations.
//!
//! ```text
//! cargo run --release --example ddim_reconstruction -- [out/denoiser]
//! ```

use std::path::PathBuf;

use waveopt::diffusion::{ddim_invert, ddim_sample, decode_latent, encode_image, Denoiser, NoiseSchedule};
use waveopt::inversion::{
    invert_with_optimization, psnr, reconstruct_with_endpoint, ssim, EmbeddingSchedule, InitMode, OptimizeConfig,
};
use waveopt::pipeline::{gen_corpus, CorpusSpec, Split};
use waveopt::{Result, Tensor};

fn report(label: &str, x: &Tensor, y: &Tensor) -> Result<()> {
    println!("  {label:<22} PSNR {:6.2} dB  SSIM {:.4}", psnr(x, y)?, ssim(x, y)?);
    Ok(())
}

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/denoiser".into()));
    let (model, schedule_cfg) = Denoiser::load(&dir)?;
    let schedule = NoiseSchedule::new(schedule_cfg.unwrap_or_default())?;
    let steps = schedule.steps();
    let spec = CorpusSpec::default();
    let corpus = gen_corpus(&spec)?;
    let config = OptimizeConfig::default();

    for class in 0..spec.classes.len() {
        let im = corpus
            .split(Split::Test)
            .find(|im| im.class == class)
            .expect("every class has test images");
        println!("{} image", spec.classes[class].name);
        let prompt = model.prompt(&[im.token])?;

        let trajectory = ddim_invert(&encode_image(&im.image)?, &prompt, &model, &schedule)?;
        let cond = EmbeddingSchedule::constant(prompt.cond().clone(), steps);
        let plain = decode_latent(&ddim_sample(trajectory.z_t(), &prompt, &cond, 1.0, &model, &schedule)?)?;
        report("inversion, w = 1", &im.image, &plain)?;

        let null = EmbeddingSchedule::constant(model.null_prompt().cond().clone(), steps);
        let cfg = reconstruct_with_endpoint(trajectory.z_t(), &prompt, &null, config.guidance, &model, &schedule)?;
        report("guided, no optimization", &im.image, &cfg)?;

        for (label, init_mode) in [
            ("null-init optimization", InitMode::NullInit),
            ("prompt-init optimization", InitMode::PromptInit),
        ] {
            let cfg_mode = OptimizeConfig { init_mode, ..config };
            let inv = invert_with_optimization(&im.image, &prompt, None, &model, &schedule, &cfg_mode)?;
            let recon = reconstruct_with_endpoint(
                inv.trajectory.z_t(),
                &prompt,
                &inv.schedule,
                config.guidance,
                &model,
                &schedule,
            )?;
            report(label, &im.image, &recon)?;
            println!("  {:<22} {:.2}s", "", inv.seconds);
        }
    }
    Ok(())
}
