//! Toy conditional diffusion model with deterministic DDIM sampling and
//! inversion.

mod codec;
mod ddim;
mod model;
mod schedule;
mod train;

pub use codec::{decode_latent, encode_image, Codec, IdentityCodec};
pub use ddim::{
    cfg_predict, ddim_coefficients, ddim_invert, ddim_sample, ddim_step, guide, sample_step, sample_steps,
    LatentTrajectory,
};
pub use model::{
    Denoiser, DenoiserConfig, DenoiserGrads, DenoiserTape, NoisePredictor, PromptEmbedding, ZeroDenoiser, NULL_TOKEN,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
pub use train::{train_denoiser, DenoiserTrainConfig, DenoiserTrainReport, TrainPoint, DENOISER_KIND};
