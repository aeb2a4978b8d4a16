use crate::activation::softmax;
use crate::error::{NnError, Result};

/// Floor applied to predicted probabilities before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `-sum(target * ln(max(predicted, LOG_FLOOR)))`; targets may be soft.
pub fn cross_entropy(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(NnError::Shape(format!(
            "cross entropy over {} predictions and {} targets",
            predicted.len(),
            target.len()
        )));
    }
    for (index, &value) in predicted.iter().chain(target).enumerate() {
        if value < 0.0 {
            return Err(NnError::NegativeProbability {
                index: index % predicted.len(),
                value,
            });
        }
    }
    Ok(-predicted
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.max(LOG_FLOOR).ln())
        .sum::<f64>())
}

/// Loss and logit gradient of softmax followed by cross entropy.
///
/// The gradient is `softmax(z) * sum(t) - t`, which reduces to `p - t` for a
/// proper target distribution.
pub fn softmax_cross_entropy(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = softmax(logits);
    let loss = cross_entropy(&p, target)?;
    let mass: f64 = target.iter().sum();
    let grad = p.iter().zip(target).map(|(&pi, &ti)| pi * mass - ti).collect();
    Ok((loss, grad))
}
