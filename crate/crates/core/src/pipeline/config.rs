use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusSpec, Split};
use super::edit::Method;
use crate::diffusion::{DenoiserConfig, DenoiserTrainConfig, ScheduleConfig};
use crate::error::Result;
use crate::estimator::{EstimatorConfig, EstimatorTrainConfig};
use crate::inversion::{InitMode, OptimizeConfig};
use crate::io::read_json;

/// The single JSON document accepted by every command. Missing sections and
/// fields fall back to their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserSection,
    pub optimization: OptimizationSection,
    pub estimator: EstimatorSection,
    pub corpus: CorpusSpec,
    pub benchmark: BenchmarkConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSection {
    pub model: DenoiserConfig,
    pub train: DenoiserTrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationSection {
    #[serde(flatten)]
    pub optimize: OptimizeConfig,
    /// PSNR-ratio threshold defining the endpoint.
    pub threshold: f64,
    /// Endpoint grid stride used by `scan`; datasets always scan every step.
    pub scan_stride: usize,
    /// Initialization used for the ground-truth endpoint scans of a dataset.
    pub dataset_init: InitMode,
}

impl Default for OptimizationSection {
    fn default() -> Self {
        Self {
            optimize: OptimizeConfig::default(),
            threshold: 0.9,
            scan_stride: 5,
            dataset_init: InitMode::PromptInit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSection {
    pub model: EstimatorConfig,
    pub train: EstimatorTrainConfig,
    /// Safety margin added to predicted endpoints.
    pub margin: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            model: EstimatorConfig::default(),
            train: EstimatorTrainConfig::default(),
            margin: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub split: Split,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            split: Split::Test,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Config = read_json(path)?;
        cfg.validated()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validated()
    }

    /// Cross-section consistency: the estimator follows the schedule's `T`
    /// and, with the identity codec, the corpus image size.
    fn validated(mut self) -> Result<Self> {
        self.estimator.model.steps = self.schedule.steps;
        self.estimator.model.latent_size = self.corpus.size;
        Ok(self)
    }

    /// Apply one seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.denoiser.model.seed = seed;
        self.denoiser.train.seed = seed;
        self.estimator.model.seed = seed;
        self.estimator.train.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn partial_sections_override_only_named_fields() {
        let cfg = Config::from_json(
            r#"{"optimization": {"iters": 3, "threshold": 0.8},
                "corpus": {"n_per_class": 4},
                "benchmark": {"methods": ["cfg", "npi+woe"]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.optimization.optimize.iters, 3);
        assert_eq!(cfg.optimization.optimize.lr, OptimizeConfig::default().lr);
        assert_eq!(cfg.optimization.threshold, 0.8);
        assert_eq!(cfg.corpus.n_per_class, 4);
        assert_eq!(cfg.benchmark.methods, vec![Method::Cfg, Method::NpiWoe]);
    }

    #[test]
    fn estimator_follows_schedule_and_corpus() {
        let cfg = Config::from_json(r#"{"schedule": {"steps": 20}, "corpus": {"size": 16}}"#).unwrap();
        assert_eq!(cfg.estimator.model.steps, 20);
        assert_eq!(cfg.estimator.model.latent_size, 16);
    }

    #[test]
    fn malformed_document_is_an_error() {
        assert!(Config::from_json("{\"corpus\": 3}").is_err());
        assert!(Config::from_json("not json").is_err());
    }
}
