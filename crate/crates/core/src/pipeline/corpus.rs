//! Synthetic images with a controllable balance of low- and high-frequency
//! content.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::encode_image;
use crate::error::{arg_err, Error, Result};
use crate::io::{pgm, read_json, write_json};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// 0 = purely smooth, 1 = purely fine texture.
    pub lambda: f64,
    pub token: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_per_class: usize,
    pub classes: Vec<ClassSpec>,
    pub size: usize,
    /// Peak deviation from mid-gray.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_per_class: 10,
            classes: vec![
                ClassSpec {
                    name: "smooth".into(),
                    lambda: 0.0,
                    token: 1,
                },
                ClassSpec {
                    name: "texture".into(),
                    lambda: 1.0,
                    token: 2,
                },
            ],
            size: 32,
            amplitude: 0.4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusImage {
    pub class: usize,
    pub token: usize,
    pub split: Split,
    pub image: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub images: Vec<CorpusImage>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    class: usize,
    token: usize,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    spec: CorpusSpec,
    images: Vec<ManifestEntry>,
}

/// Train/val/test counts for `n` images of one class, scaled from 30/10/10.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.6).round() as usize;
    let val = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, val, n - train - val)
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusImage> {
        self.images.iter().filter(move |im| im.split == split)
    }

    /// Encoded latents and prompt tokens of every non-test image, in corpus
    /// order: the denoiser's training set.
    pub fn denoiser_set(&self) -> Result<(Vec<Tensor>, Vec<usize>)> {
        self.images
            .iter()
            .filter(|im| im.split != Split::Test)
            .map(|im| Ok((encode_image(&im.image)?, im.token)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::new();
        for (i, im) in self.images.iter().enumerate() {
            let file = format!("img_{i:03}_{}.pgm", self.spec.classes[im.class].name);
            pgm::save(&dir.join(&file), &im.image)?;
            entries.push(ManifestEntry {
                file,
                class: im.class,
                token: im.token,
                split: im.split,
            });
        }
        write_json(
            &dir.join("corpus.json"),
            &CorpusManifest {
                spec: self.spec.clone(),
                images: entries,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: CorpusManifest = read_json(&dir.join("corpus.json"))?;
        let images = m
            .images
            .into_iter()
            .map(|e| {
                if e.class >= m.spec.classes.len() {
                    return Err(Error::Format(format!("{}: unknown class {}", e.file, e.class)));
                }
                Ok(CorpusImage {
                    class: e.class,
                    token: e.token,
                    split: e.split,
                    image: pgm::load(&dir.join(&e.file))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec: m.spec, images })
    }
}

pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.size < 8 || spec.size % 4 != 0 {
        return Err(arg_err!(
            "image size must be a multiple of 4 and at least 8, got {}",
            spec.size
        ));
    }
    if spec.classes.is_empty() || spec.n_per_class == 0 {
        return Err(arg_err!("corpus needs at least one class and one image per class"));
    }
    if let Some(c) = spec.classes.iter().find(|c| !(0.0..=1.0).contains(&c.lambda)) {
        return Err(arg_err!("class {} has lambda {} outside [0, 1]", c.name, c.lambda));
    }
    let (n_train, n_val, _) = split_counts(spec.n_per_class);
    let mut images = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        let mut rng = Rng::with_stream(spec.seed, 100 + ci as u64);
        for i in 0..spec.n_per_class {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            images.push(CorpusImage {
                class: ci,
                token: class.token,
                split,
                image: synth_image(&mut rng, spec.size, class.lambda, spec.amplitude)?,
            });
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        images,
    })
}

/// `0.5 + amp (cos(πλ/2) L + sin(πλ/2) H)`, quantized to 8 bits, where `L`
/// and `H` are smooth and textured fields centered and scaled to unit peak magnitude.
pub fn synth_image(rng: &mut Rng, size: usize, lambda: f64, amplitude: f64) -> Result<Tensor> {
    let low = unit_peak(low_field(rng, size));
    let high = unit_peak(high_field(rng, size)?);
    let (cl, sh) = ((PI * lambda / 2.0).cos(), (PI * lambda / 2.0).sin());
    let data = low
        .iter()
        .zip(&high)
        .map(|(l, h)| (0.5 + amplitude * (cl * l + sh * h)).clamp(0.0, 1.0))
        .collect();
    Ok(pgm::quantize(&Tensor::from_vec(&[size, size], data)?))
}

/// Zero mean, unit peak magnitude.
fn unit_peak(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
    }
    v
}

fn low_field(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n * n];
    let nf = n as f64;
    if rng.uniform() < 0.5 {
        // gaussian blobs
        for _ in 0..2 + rng.below(3) {
            let (cy, cx) = (rng.uniform() * nf, rng.uniform() * nf);
            let s = nf * rng.uniform_in(0.15, 0.3);
            let a = if rng.uniform() < 0.5 { -1.0 } else { 1.0 } * rng.uniform_in(0.5, 1.0);
            for y in 0..n {
                for x in 0..n {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    f[y * n + x] += a * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
    } else {
        // one or two cycles across the image
        for _ in 0..2 {
            let (fy, fx) = (rng.uniform_in(0.3, 1.5), rng.uniform_in(0.3, 1.5));
            let ph = rng.uniform() * 2.0 * PI;
            let a = rng.uniform_in(0.5, 1.0);
            for y in 0..n {
                for x in 0..n {
                    let arg = 2.0 * PI * (fy * y as f64 + fx * x as f64) / nf + ph;
                    f[y * n + x] += a * arg.sin();
                }
            }
        }
    }
    f
}

fn high_field(rng: &mut Rng, n: usize) -> Result<Vec<f64>> {
    let nf = n as f64;
    let mut f = vec![0.0; n * n];
    match rng.below(3) {
        0 => {
            // pixel checkerboard under a slowly varying envelope
            let env = unit_peak(low_field(rng, n));
            for y in 0..n {
                for x in 0..n {
                    let s = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                    f[y * n + x] = s * (0.6 + 0.4 * env[y * n + x]);
                }
            }
        }
        1 => {
            for _ in 0..2 {
                let (fy, fx) = (rng.uniform_in(0.4, 0.5) * nf, rng.uniform_in(0.4, 0.5) * nf);
                let ph = rng.uniform() * 2.0 * PI;
                for y in 0..n {
                    for x in 0..n {
                        f[y * n + x] += (2.0 * PI * (fy * y as f64 + fx * x as f64) / nf + ph).sin();
                    }
                }
            }
        }
        _ => {
            f = rng.fill_normal(&[n * n])?.into_data();
        }
    }
    Ok(f)
}
