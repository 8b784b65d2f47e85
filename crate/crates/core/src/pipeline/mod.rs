//! End-to-end orchestration: corpus, dataset, editing and benchmarking.

mod benchmark;
mod config;
mod corpus;
mod dataset;
mod edit;

pub use benchmark::{benchmark, BenchImage, BenchRecord, BenchmarkReport, MethodRow};
pub use config::{BenchmarkConfig, Config, DenoiserSection, EstimatorSection, OptimizationSection};
pub use corpus::{gen_corpus, split_counts, synth_image, ClassSpec, Corpus, CorpusImage, CorpusSpec, Split};
pub use dataset::{build_dataset, class_summaries, ClassSummary, Dataset, DatasetConfig, ImageRecord};
pub use edit::{edit, invert_for_method, EditConfig, EditReport, Method};
pub mod commands;
