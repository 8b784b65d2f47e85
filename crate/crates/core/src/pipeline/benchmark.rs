//! Reconstruction quality and cost of every inversion method on a set of
//! images, referenced to the full null-initialized optimization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edit::{edit, EditConfig, Method};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{arg_err, Result};
use crate::estimator::WaveOptEstimator;
use crate::inversion::{psnr, psnr_ratio, ssim};
use crate::io::{write_csv, write_json};
use crate::numerics::Tensor;

/// One image to reconstruct with its prompt token.
#[derive(Clone, Debug)]
pub struct BenchImage {
    pub index: usize,
    pub class: usize,
    pub token: usize,
    pub image: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub image: usize,
    pub class: usize,
    pub method: Method,
    pub psnr: f64,
    pub psnr_ratio: f64,
    pub ssim: f64,
    /// Inversion, optimization and estimator time; sampling excluded.
    pub seconds: f64,
    pub endpoint: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub psnr_ratio: f64,
    pub ssim: f64,
    pub seconds: f64,
    /// Mean optimized-step count where the method truncates.
    pub mean_endpoint: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<MethodRow>,
    pub records: Vec<BenchRecord>,
}

impl BenchmarkReport {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("benchmark.json"), self)?;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.to_string(),
                    format!("{:.4}", r.psnr_ratio),
                    format!("{:.4}", r.ssim),
                    format!("{:.4}", r.seconds),
                    r.mean_endpoint.map(|e| format!("{e:.2}")).unwrap_or_default(),
                ]
            })
            .collect::<Vec<_>>();
        write_csv(
            &dir.join("benchmark.csv"),
            &["method", "psnr_ratio", "ssim", "seconds", "mean_endpoint"],
            &rows,
        )?;
        let per_image = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.image.to_string(),
                    r.class.to_string(),
                    r.method.to_string(),
                    format!("{:.4}", r.psnr),
                    format!("{:.4}", r.psnr_ratio),
                    format!("{:.4}", r.ssim),
                    format!("{:.4}", r.seconds),
                    r.endpoint.map(|e| e.to_string()).unwrap_or_default(),
                ]
            })
            .collect::<Vec<_>>();
        write_csv(
            &dir.join("benchmark_images.csv"),
            &[
                "image",
                "class",
                "method",
                "psnr",
                "psnr_ratio",
                "ssim",
                "seconds",
                "endpoint",
            ],
            &per_image,
        )
    }
}

/// Reconstruct every image with every method (`p_edit = p_src`). The full
/// null-initialized run is always performed since it is the PSNR reference.
pub fn benchmark(
    images: &[BenchImage],
    methods: &[Method],
    model: &Denoiser,
    schedule: &NoiseSchedule,
    estimator: Option<&WaveOptEstimator>,
    config: &EditConfig,
) -> Result<BenchmarkReport> {
    if images.is_empty() {
        return Err(arg_err!("benchmark needs at least one image"));
    }
    if methods.is_empty() {
        return Err(arg_err!("benchmark needs at least one method"));
    }
    if estimator.is_none() {
        if let Some(m) = methods.iter().find(|m| m.uses_estimator()) {
            return Err(arg_err!("method {m} needs a trained estimator"));
        }
    }
    let mut records = Vec::with_capacity(images.len() * methods.len());
    for im in images {
        let prompt = model.prompt(&[im.token])?;
        let (reference, ref_report) = edit(&im.image, &prompt, &prompt, Method::Nti, model, schedule, None, config)?;
        let psnr_ref = psnr(&im.image, &reference)?;
        for &method in methods {
            let (x, report) = if method == Method::Nti {
                (reference.clone(), ref_report.clone())
            } else {
                edit(&im.image, &prompt, &prompt, method, model, schedule, estimator, config)?
            };
            let p = psnr(&im.image, &x)?;
            records.push(BenchRecord {
                image: im.index,
                class: im.class,
                method,
                psnr: p,
                psnr_ratio: psnr_ratio(p, psnr_ref)?,
                ssim: ssim(&im.image, &x)?,
                seconds: report.charged_seconds(),
                endpoint: report.endpoint,
            });
        }
    }
    let rows = methods
        .iter()
        .map(|&method| {
            let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.method == method).collect();
            let n = rs.len() as f64;
            let ends: Vec<f64> = rs.iter().filter_map(|r| r.endpoint.map(|e| e as f64)).collect();
            MethodRow {
                method,
                psnr_ratio: rs.iter().map(|r| r.psnr_ratio).sum::<f64>() / n,
                ssim: rs.iter().map(|r| r.ssim).sum::<f64>() / n,
                seconds: rs.iter().map(|r| r.seconds).sum::<f64>() / n,
                mean_endpoint: (!ends.is_empty()).then(|| ends.iter().sum::<f64>() / ends.len() as f64),
            }
        })
        .collect();
    Ok(BenchmarkReport { rows, records })
}
