use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddim_invert, ddim_sample, decode_latent, encode_image, NoisePredictor, NoiseSchedule, PromptEmbedding,
};
use crate::error::{arg_err, Error, Result};
use crate::estimator::{predict_endpoint, EndpointPrediction, WaveOptEstimator};
use crate::inversion::{
    init_embedding, invert_with_optimization, optimize_along, EmbeddingSchedule, InitMode, OptimizeConfig,
};
use crate::numerics::Tensor;

/// How the unconditional embedding schedule is obtained before sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Plain DDIM inversion, null embedding everywhere.
    #[serde(rename = "cfg")]
    Cfg,
    /// Null-initialized optimization over every step.
    #[serde(rename = "nti")]
    Nti,
    /// Source prompt as the unconditional embedding, no optimization.
    #[serde(rename = "npi")]
    Npi,
    #[serde(rename = "nti+woe")]
    NtiWoe,
    /// Prompt-initialized optimization truncated at the predicted endpoint.
    #[serde(rename = "npi+woe")]
    NpiWoe,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Nti, Method::Npi, Method::NtiWoe, Method::NpiWoe, Method::Cfg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cfg => "cfg",
            Method::Nti => "nti",
            Method::Npi => "npi",
            Method::NtiWoe => "nti+woe",
            Method::NpiWoe => "npi+woe",
        }
    }

    pub fn uses_estimator(self) -> bool {
        matches!(self, Method::NtiWoe | Method::NpiWoe)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| arg_err!("unknown method {s:?} (expected cfg, nti, npi, nti+woe or npi+woe)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub optimize: OptimizeConfig,
    pub margin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub method: Method,
    /// Inversion plus optimization.
    pub inversion_seconds: f64,
    pub estimator_seconds: f64,
    pub sampling_seconds: f64,
    /// Last optimized step; `None` for a full run.
    pub endpoint: Option<usize>,
    pub prediction: Option<EndpointPrediction>,
}

impl EditReport {
    /// Time charged to the method: everything but the final sampling.
    pub fn charged_seconds(&self) -> f64 {
        self.inversion_seconds + self.estimator_seconds
    }
}

/// The embedding schedule a method produces for `x_ori`, with the pivot's
/// noise latent `z_T`.
pub fn invert_for_method<M: NoisePredictor>(
    x_ori: &Tensor,
    p_src: &PromptEmbedding,
    method: Method,
    model: &M,
    schedule: &NoiseSchedule,
    estimator: Option<&WaveOptEstimator>,
    config: &EditConfig,
) -> Result<(Tensor, EmbeddingSchedule, EditReport)> {
    let steps = schedule.steps();
    let mode = match method {
        Method::Cfg | Method::Nti | Method::NtiWoe => InitMode::NullInit,
        Method::Npi | Method::NpiWoe => InitMode::PromptInit,
    };
    let opt = OptimizeConfig {
        init_mode: mode,
        ..config.optimize
    };
    let mut report = EditReport {
        method,
        inversion_seconds: 0.0,
        estimator_seconds: 0.0,
        sampling_seconds: 0.0,
        endpoint: None,
        prediction: None,
    };
    let (z_t, phis) = match method {
        Method::Cfg | Method::Npi => {
            let start = Instant::now();
            let traj = ddim_invert(&encode_image(x_ori)?, p_src, model, schedule)?;
            let phis = EmbeddingSchedule::constant(init_embedding(model, p_src, mode), steps);
            report.inversion_seconds = start.elapsed().as_secs_f64();
            report.endpoint = Some(0);
            (traj.z_t().clone(), phis)
        }
        Method::Nti => {
            let out = invert_with_optimization(x_ori, p_src, None, model, schedule, &opt)?;
            report.inversion_seconds = out.seconds;
            (out.trajectory.z_t().clone(), out.schedule)
        }
        Method::NtiWoe | Method::NpiWoe => {
            let est = estimator.ok_or_else(|| arg_err!("method {method} needs a trained estimator"))?;
            if est.config.steps != steps {
                return Err(arg_err!(
                    "estimator trained for {} steps, schedule has {steps}",
                    est.config.steps
                ));
            }
            // The estimator is queried before any optimization, on z_T.
            let start = Instant::now();
            let traj = ddim_invert(&encode_image(x_ori)?, p_src, model, schedule)?;
            let invert_seconds = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let pred = predict_endpoint(est, x_ori, traj.z_t(), 0, config.margin)?;
            report.estimator_seconds = start.elapsed().as_secs_f64();
            let out = optimize_along(traj, p_src, Some(pred.t_star_used), model, schedule, &opt)?;
            report.inversion_seconds = invert_seconds + out.seconds;
            report.endpoint = Some(pred.t_star_used);
            report.prediction = Some(pred);
            (out.trajectory.z_t().clone(), out.schedule)
        }
    };
    Ok((z_t, phis, report))
}

/// Invert `x_ori` under `p_src` with `method`, then sample under `p_edit`.
pub fn edit<M: NoisePredictor>(
    x_ori: &Tensor,
    p_src: &PromptEmbedding,
    p_edit: &PromptEmbedding,
    method: Method,
    model: &M,
    schedule: &NoiseSchedule,
    estimator: Option<&WaveOptEstimator>,
    config: &EditConfig,
) -> Result<(Tensor, EditReport)> {
    let (z_t, phis, mut report) = invert_for_method(x_ori, p_src, method, model, schedule, estimator, config)?;
    let start = Instant::now();
    let z0 = ddim_sample(&z_t, p_edit, &phis, config.optimize.guidance, model, schedule)?;
    let x = decode_latent(&z0)?;
    report.sampling_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}
