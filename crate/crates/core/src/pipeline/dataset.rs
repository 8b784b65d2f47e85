//! Ground-truth endpoints and estimator samples for a corpus.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Split};
use crate::diffusion::{decode_latent, Denoiser, NoiseSchedule};
use crate::error::{arg_err, Error, Result};
use crate::estimator::TrainingPair;
use crate::inversion::{endpoint_scan, psnr, OptimizeConfig};
use crate::io::{pgm, read_json, wot, write_csv, write_json};
use crate::numerics::Tensor;
use crate::wavelet::{frequency_profile, EqualizeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub optimize: OptimizeConfig,
    pub threshold: f64,
    pub equalize: EqualizeConfig,
}

/// Per-image scan summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub class: usize,
    pub token: usize,
    pub split: Split,
    pub t_star: usize,
    /// Whether the threshold was crossed before the last step.
    pub crossed: bool,
    /// Truncated-reconstruction PSNR for every endpoint `0..=T`.
    pub psnrs: Vec<f64>,
    pub ratios: Vec<f64>,
    /// PSNR of each pivot latent decoded directly, by progress.
    pub psnr_direct: Vec<f64>,
    pub energy_ll: f64,
    pub energy_sum: f64,
    pub scan_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub steps: usize,
    pub records: Vec<ImageRecord>,
    pub images: Vec<Tensor>,
    /// Pivot latents by level: `latents[i][j]` is image `i` at level `j`.
    pub latents: Vec<Vec<Tensor>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    config: DatasetConfig,
    steps: usize,
    records: Vec<ImageRecord>,
}

/// Scan every corpus image at stride 1 and keep everything the estimator's
/// samples are cut from.
pub fn build_dataset(
    corpus: &Corpus,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    config: &DatasetConfig,
) -> Result<Dataset> {
    let steps = schedule.steps();
    let mut records = Vec::with_capacity(corpus.images.len());
    let mut images = Vec::with_capacity(corpus.images.len());
    let mut latents = Vec::with_capacity(corpus.images.len());
    for (index, im) in corpus.images.iter().enumerate() {
        let start = Instant::now();
        let prompt = model.prompt(&[im.token])?;
        let scan = endpoint_scan(
            &im.image,
            &prompt,
            1,
            config.threshold,
            model,
            schedule,
            &config.optimize,
        )?;
        let traj = &scan.inversion.trajectory;
        let psnr_direct = (0..=steps)
            .map(|t| psnr(&im.image, &decode_latent(traj.at_progress(t))?))
            .collect::<Result<Vec<_>>>()?;
        let profile = frequency_profile(&im.image, &config.equalize)?;
        records.push(ImageRecord {
            index,
            class: im.class,
            token: im.token,
            split: im.split,
            t_star: scan.endpoint.t,
            crossed: scan.endpoint.crossed,
            psnrs: scan.psnrs.clone(),
            ratios: scan.ratios.clone(),
            psnr_direct,
            energy_ll: profile.energy_ll,
            energy_sum: profile.energy_sum,
            scan_seconds: start.elapsed().as_secs_f64(),
        });
        images.push(im.image.clone());
        latents.push(traj.latents.clone());
    }
    Ok(Dataset {
        config: *config,
        steps,
        records,
        images,
        latents,
    })
}

impl Dataset {
    /// One sample per `t` in `0..=t*` for every image of `split`.
    pub fn pairs(&self, split: Split) -> Result<Vec<TrainingPair>> {
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| r.split == split) {
            let x_ori = &self.images[r.index];
            let profile = frequency_profile(x_ori, &self.config.equalize)?;
            for t in 0..=r.t_star {
                out.push(TrainingPair {
                    image: r.index,
                    x_ori: x_ori.clone(),
                    x_ll: profile.subbands.ll.clone(),
                    x_sum: profile.x_sum_equalized.clone(),
                    z_t: self.latents[r.index][self.steps - t].clone(),
                    t,
                    t_star_gt: r.t_star,
                    psnr_t: r.psnrs[t],
                    psnr_t_star: r.psnrs[r.t_star],
                    psnr_t_direct: r.psnr_direct[t],
                });
            }
        }
        Ok(out)
    }

    /// Sample count `Σ (t* + 1)` over `split`.
    pub fn pair_count(&self, split: Split) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.t_star + 1)
            .sum()
    }

    /// Mean ground-truth endpoint of one class, over all splits.
    pub fn class_mean_endpoint(&self, class: usize) -> Option<f64> {
        mean(
            self.records
                .iter()
                .filter(|r| r.class == class)
                .map(|r| r.t_star as f64),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for r in &self.records {
            pgm::save(&dir.join(format!("image_{:03}.pgm", r.index)), &self.images[r.index])?;
            let refs: Vec<&Tensor> = self.latents[r.index].iter().collect();
            wot::save(&dir.join(format!("latents_{:03}.wot", r.index)), &Tensor::stack(&refs)?)?;
        }
        write_json(
            &dir.join("dataset.json"),
            &DatasetManifest {
                config: self.config,
                steps: self.steps,
                records: self.records.clone(),
            },
        )?;
        let rows = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.index.to_string(),
                    r.class.to_string(),
                    format!("{:?}", r.split).to_lowercase(),
                    r.t_star.to_string(),
                    r.crossed.to_string(),
                    format!("{:.6}", r.energy_ll),
                    format!("{:.6}", r.energy_sum),
                ]
            })
            .collect::<Vec<_>>();
        write_csv(
            &dir.join("endpoints.csv"),
            &[
                "image",
                "class",
                "split",
                "t_star",
                "crossed",
                "energy_ll",
                "energy_sum",
            ],
            &rows,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: DatasetManifest = read_json(&dir.join("dataset.json"))?;
        let mut images = Vec::with_capacity(m.records.len());
        let mut latents = Vec::with_capacity(m.records.len());
        for (i, r) in m.records.iter().enumerate() {
            if r.index != i || r.t_star > m.steps || r.psnrs.len() != m.steps + 1 {
                return Err(Error::Format(format!("dataset record {i} is inconsistent")));
            }
            images.push(pgm::load(&dir.join(format!("image_{i:03}.pgm")))?);
            let stack = wot::load(&dir.join(format!("latents_{i:03}.wot")))?;
            let levels = stack.unstack()?;
            if levels.len() != m.steps + 1 {
                return Err(Error::Format(format!("image {i} has {} latents", levels.len())));
            }
            latents.push(levels);
        }
        Ok(Dataset {
            config: m.config,
            steps: m.steps,
            records: m.records,
            images,
            latents,
        })
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Class-mean endpoints and energies, the frequency/endpoint summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub images: usize,
    pub mean_t_star: f64,
    pub mean_energy_ll: f64,
    pub mean_energy_sum: f64,
}

pub fn class_summaries(records: &[ImageRecord]) -> Result<Vec<ClassSummary>> {
    if records.is_empty() {
        return Err(arg_err!("no records to summarize"));
    }
    let mut classes: Vec<usize> = records.iter().map(|r| r.class).collect();
    classes.sort_unstable();
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|c| {
            let rs: Vec<&ImageRecord> = records.iter().filter(|r| r.class == c).collect();
            ClassSummary {
                class: c,
                images: rs.len(),
                mean_t_star: mean(rs.iter().map(|r| r.t_star as f64)).unwrap_or(0.0),
                mean_energy_ll: mean(rs.iter().map(|r| r.energy_ll)).unwrap_or(0.0),
                mean_energy_sum: mean(rs.iter().map(|r| r.energy_sum)).unwrap_or(0.0),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(index: usize, class: usize, split: Split, t_star: usize) -> ImageRecord {
        ImageRecord {
            index,
            class,
            token: class + 1,
            split,
            t_star,
            crossed: true,
            psnrs: (0..=4).map(|t| 20.0 + t as f64).collect(),
            ratios: vec![0.0; 5],
            psnr_direct: vec![5.0; 5],
            energy_ll: 10.0 * (1 + class) as f64,
            energy_sum: 1.0,
            scan_seconds: 0.0,
        }
    }

    fn toy() -> Dataset {
        let records = vec![
            record(0, 0, Split::Train, 4),
            record(1, 1, Split::Train, 1),
            record(2, 1, Split::Test, 2),
        ];
        let latents = (0..3)
            .map(|i| {
                (0..=4)
                    .map(|j| Tensor::full(&[2, 2], (10 * i + j) as f64 / 4.0))
                    .collect()
            })
            .collect();
        Dataset {
            config: DatasetConfig {
                optimize: OptimizeConfig::default(),
                threshold: 0.9,
                equalize: EqualizeConfig::default(),
            },
            steps: 4,
            records,
            images: (0..3)
                .map(|i| Tensor::full(&[4, 4], ((50 * i) as f32 / 255.0) as f64))
                .collect(),
            latents,
        }
    }

    #[test]
    fn one_pair_per_step_up_to_the_endpoint() {
        let ds = toy();
        let train = ds.pairs(Split::Train).unwrap();
        assert_eq!(train.len(), 5 + 2);
        assert_eq!(ds.pair_count(Split::Train), 7);
        assert!(train.iter().all(|p| p.t <= p.t_star_gt && p.t_star_gt <= 4));
        // z_t is the pivot latent `t` steps into sampling
        let p = &train[1];
        assert_eq!((p.image, p.t), (0, 1));
        assert_eq!(p.z_t, Tensor::full(&[2, 2], 0.75));
        assert_eq!(p.psnr_t, 21.0);
        assert_eq!(p.psnr_t_star, 24.0);
        assert_eq!(ds.pairs(Split::Val).unwrap().len(), 0);
    }

    #[test]
    fn class_means() {
        let ds = toy();
        assert_eq!(ds.class_mean_endpoint(1), Some(1.5));
        assert_eq!(ds.class_mean_endpoint(7), None);
        let s = class_summaries(&ds.records).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].mean_energy_ll, 20.0);
        assert!(class_summaries(&[]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.latents, ds.latents);
        assert_eq!(back.images, ds.images);
        assert!(dir.path().join("endpoints.csv").exists());
    }
}
