use super::model::Model;
use super::tensor::Tensor;
use crate::error::Result;

/// Largest relative gap between analytic and central-difference gradients of the
/// mean BCE loss over every parameter. Gaps are divided by
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn max_relative_error(model: &Model, batch: &Tensor, labels: &[f64], h: f64) -> Result<f64> {
    let (_, grads) = model.gradients(batch, labels)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in 0..grads.len() {
        let orig = probe.params[k];
        probe.params[k] = orig + h;
        let up = probe.loss(batch, labels)?;
        probe.params[k] = orig - h;
        let down = probe.loss(batch, labels)?;
        probe.params[k] = orig;
        let num = (up - down) / (2.0 * h);
        let rel = (grads[k] - num).abs() / grads[k].abs().max(num.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
