//! The endpoint estimator: wavelet-aware visual encoders, cross-attention to
//! the latent, self-attention and a regression head.

mod loss;
mod model;
mod train;

pub use loss::{loss_hinge, loss_l2, loss_total, mae};
pub use model::{ConvEncoder, EstimatorConfig, EstimatorInput, EstimatorTape, WaveOptEstimator};
pub use train::{
    endpoint_from_prediction, evaluate, predict_endpoint, predict_remaining, train_estimator,
    train_estimator_with_eval, wavelet_views, EndpointPrediction, EpochMetrics, EstimatorMetrics, EstimatorTrainConfig,
    TrainingPair, ESTIMATOR_KIND,
};
