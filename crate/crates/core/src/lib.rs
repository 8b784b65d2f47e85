//! Wavelet-guided early stopping for null-text style embedding optimization
//! in DDIM-inversion image reconstruction and editing.
//!
//! The crate is a small, fully CPU-bound laboratory:
//!
//! * [`numerics`]: f64 tensors, seeded randomness, layers with explicit
//!   backward passes, Adam, and a finite-difference gradient checker.
//! * [`wavelet`]: single-level Haar DWT, detail-subband averaging, adaptive
//!   histogram equalization and subband energies.
//! * [`diffusion`]: noise schedule, a toy conditional ε-predictor, classifier
//!   free guidance, deterministic DDIM sampling and inversion.
//! * [`inversion`]: per-timestep embedding optimization, truncated
//!   ("copy the last embedding") schedules, endpoint scans and quality metrics.
//! * [`estimator`]: the endpoint estimator network and its loss.
//! * [`pipeline`]: synthetic corpus, dataset construction, editing,
//!   benchmarking and the command implementations behind the `waveopt` binary.

pub mod diffusion;
pub mod error;
pub mod estimator;
pub mod inversion;
pub mod io;
pub mod numerics;
pub mod pipeline;
pub mod wavelet;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
