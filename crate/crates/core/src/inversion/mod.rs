//! Embedding optimization on top of DDIM inversion, φ-copy truncation,
//! endpoint scans and quality metrics.

mod metrics;
mod optimize;
mod scan;
mod schedule;

pub use metrics::{detect_endpoint, psnr, psnr_ratio, ssim, Endpoint, PSNR_CAP, SSIM_WINDOW};
pub use optimize::{
    init_embedding, invert_with_optimization, optimize_along, optimize_embedding_at_t, InnerOptimizer, InversionOutput,
    OptimizeConfig, StepLoss, StepOutcome,
};
pub use scan::{endpoint_scan, reconstruct_with_endpoint, scan_grid, ScanResult};
pub use schedule::{phi_copy, EmbeddingSchedule, InitMode};
