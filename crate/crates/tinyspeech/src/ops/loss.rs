//! Softmax and cross-entropy.

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Jacobian-vector product of softmax at output `y`:
/// `grad_x = y * (grad_y - <y, grad_y>)`.
pub fn softmax_backward(y: &[f64], grad_y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), grad_y.len());
    let dot: f64 = y.iter().zip(grad_y).map(|(a, b)| a * b).sum();
    y.iter()
        .zip(grad_y)
        .map(|(&yi, &gi)| yi * (gi - dot))
        .collect()
}

/// `-ln(probs[label])` with the probability floored at 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Shape(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Combined gradient of cross-entropy after softmax, with respect to the
/// logits: `probs - onehot(label)`.
pub fn softmax_xent_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}
