use crate::error::{arg_err, Result};

/// `((t*_pred - t) - (t*_gt - t))^2`, written in terms of the predicted
/// remaining steps.
pub fn loss_l2(pred_remaining: f64, t_star_gt: usize, t: usize) -> f64 {
    let gt = t_star_gt as f64 - t as f64;
    (pred_remaining - gt).powi(2)
}

/// `max(0, PSNR_{t*} - PSNR_t)`
pub fn loss_hinge(psnr_t_star: f64, psnr_t: f64) -> f64 {
    (psnr_t_star - psnr_t).max(0.0)
}

pub fn loss_total(l2: f64, hinge: f64, a1: f64, a2: f64) -> f64 {
    a1 * l2 + a2 * hinge
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(arg_err!("{} predictions for {} targets", preds.len(), gts.len()));
    }
    Ok(preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}
