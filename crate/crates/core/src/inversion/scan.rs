//! Endpoint-truncated reconstruction and the endpoint scan.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::metrics::{detect_endpoint, psnr, psnr_ratio, Endpoint};
use super::optimize::{init_embedding, invert_with_optimization, InversionOutput, OptimizeConfig};
use super::schedule::{phi_copy, EmbeddingSchedule};
use crate::diffusion::{ddim_sample, decode_latent, sample_steps, NoisePredictor, NoiseSchedule, PromptEmbedding};
use crate::error::{arg_err, Result};
use crate::io::{pgm, write_csv, write_json};
use crate::numerics::Tensor;

pub fn reconstruct_with_endpoint<M: NoisePredictor>(
    z_t: &Tensor,
    prompt: &PromptEmbedding,
    phis: &EmbeddingSchedule,
    guidance: f64,
    model: &M,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    decode_latent(&ddim_sample(z_t, prompt, phis, guidance, model, schedule)?)
}

/// Scanned endpoints `0, stride, 2 stride, ..`, always ending at `steps`.
pub fn scan_grid(stride: usize, steps: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(arg_err!("scan stride must be positive"));
    }
    let mut grid: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *grid.last().unwrap() != steps {
        grid.push(steps);
    }
    Ok(grid)
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    /// Scanned endpoints; `0` means no optimized step at all.
    pub grid: Vec<usize>,
    pub reconstructions: Vec<Tensor>,
    pub psnrs: Vec<f64>,
    pub ratios: Vec<f64>,
    pub endpoint: Endpoint,
    pub threshold: f64,
    pub optimization_seconds: f64,
    pub total_seconds: f64,
    pub inversion: InversionOutput,
}

#[derive(Serialize)]
struct ScanRecord<'a> {
    grid: &'a [usize],
    psnrs: &'a [f64],
    ratios: &'a [f64],
    endpoint: usize,
    crossed: bool,
    threshold: f64,
    optimization_seconds: f64,
    total_seconds: f64,
}

impl ScanResult {
    pub fn psnr_at(&self, t_star: usize) -> Option<f64> {
        self.grid.iter().position(|&g| g == t_star).map(|i| self.psnrs[i])
    }

    /// `scan.json`, `scan.csv` and one PGM per scanned endpoint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(
            &dir.join("scan.json"),
            &ScanRecord {
                grid: &self.grid,
                psnrs: &self.psnrs,
                ratios: &self.ratios,
                endpoint: self.endpoint.t,
                crossed: self.endpoint.crossed,
                threshold: self.threshold,
                optimization_seconds: self.optimization_seconds,
                total_seconds: self.total_seconds,
            },
        )?;
        let rows: Vec<Vec<String>> = self
            .grid
            .iter()
            .zip(self.psnrs.iter().zip(&self.ratios))
            .map(|(t, (p, r))| vec![t.to_string(), format!("{p:.6}"), format!("{r:.6}")])
            .collect();
        write_csv(&dir.join("scan.csv"), &["t_star", "psnr", "ratio"], &rows)?;
        for (t, img) in self.grid.iter().zip(&self.reconstructions) {
            pgm::save(&dir.join(format!("recon_t{t:03}.pgm")), img)?;
        }
        Ok(())
    }
}

/// Optimize every step once, then reconstruct with each scanned endpoint
/// and compare against the untruncated reconstruction.
pub fn endpoint_scan<M: NoisePredictor>(
    x_ori: &Tensor,
    prompt: &PromptEmbedding,
    stride: usize,
    threshold: f64,
    model: &M,
    schedule: &NoiseSchedule,
    config: &OptimizeConfig,
) -> Result<ScanResult> {
    let steps = schedule.steps();
    let grid = scan_grid(stride, steps)?;
    let start = Instant::now();
    let inversion = invert_with_optimization(x_ori, prompt, None, model, schedule, config)?;
    let optimization_seconds = inversion.seconds;
    let full = &inversion.schedule;
    let z_t = inversion.trajectory.z_t();

    // states[k] = latent after k steps of the fully optimized run
    let (_, mut states) = sample_steps(z_t, 1..steps + 1, prompt, full, config.guidance, model, schedule, true)?;
    states.insert(0, z_t.clone());
    let reference = decode_latent(&states[steps])?;
    let psnr_full = psnr(x_ori, &reference)?;

    let init = init_embedding(model, prompt, config.init_mode);
    let mut reconstructions = Vec::with_capacity(grid.len());
    let mut psnrs = Vec::with_capacity(grid.len());
    let mut ratios = Vec::with_capacity(grid.len());
    for &t in &grid {
        let img = if t == steps {
            reference.clone()
        } else {
            let truncated = if t == 0 {
                EmbeddingSchedule::constant(init.clone(), steps)
            } else {
                phi_copy(full.phis(), t, steps)?
            };
            let (z0, _) = sample_steps(
                &states[t],
                t + 1..steps + 1,
                prompt,
                &truncated,
                config.guidance,
                model,
                schedule,
                false,
            )?;
            decode_latent(&z0)?
        };
        let p = psnr(x_ori, &img)?;
        psnrs.push(p);
        ratios.push(psnr_ratio(p, psnr_full)?);
        reconstructions.push(img);
    }
    let endpoint = detect_endpoint(&ratios, &grid, threshold)?;
    Ok(ScanResult {
        grid,
        reconstructions,
        psnrs,
        ratios,
        endpoint,
        threshold,
        optimization_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        inversion,
    })
}
