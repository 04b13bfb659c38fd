//! Summed-squared-error loss.

use crate::error::{Error, Result};

/// Returns `(sum((pred - target)^2), d loss / d pred)`.
///
/// The gradient of each component is `2 (pred - target)`. Batch averaging is
/// the caller's concern; this is the per-sample sum.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            context: "mse_loss target".to_string(),
            expected: pred.len(),
            actual: target.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (g, (p, t)) in grad.iter_mut().zip(pred.iter().zip(target)) {
        let diff = p - t;
        loss += diff * diff;
        *g = 2.0 * diff;
    }
    Ok((loss, grad))
}
