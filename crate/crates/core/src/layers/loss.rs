use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Softmax cross-entropy of `logits` against class `target`, with its
/// gradient `softmax - one_hot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vector)> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            op: "softmax_cross_entropy",
            index: target,
            universe: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let log_sum = sum.ln();
    for p in &mut probs {
        *p /= sum;
    }
    let loss = log_sum - (logits[target] - max);
    probs[target] -= 1.0;
    Ok((loss, probs.into()))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
