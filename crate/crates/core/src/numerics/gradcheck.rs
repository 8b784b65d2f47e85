//! Central finite-difference validation of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Coordinates whose gradients are both below this magnitude are compared
/// absolutely instead of relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest relative error, over all coordinates of `point`, between the
/// analytic gradient returned by `f` and a fourth-order central difference
/// with step `eps`.
///
/// `f` returns the scalar value and its analytic gradient at the given point.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value} at the base point")));
    }
    point.same_shape(&analytic)?;
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x = point.data()[i];
        let mut at = |h: f64| -> Result<f64> {
            probe.data_mut()[i] = x + h;
            let (v, _) = f(&probe)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite value near coordinate {i}")));
            }
            Ok(v)
        };
        let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
        probe.data_mut()[i] = x;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Scalar probe `sum(r * y)` with fixed weights, used to check maps with
/// tensor outputs; its gradient w.r.t. `y` is `r`.
pub fn probe_weights(shape: &[usize], seed: u64) -> Tensor {
    super::Rng::with_stream(seed, 0xC0FFEE)
        .fill_normal(shape)
        .expect("valid shape")
}
