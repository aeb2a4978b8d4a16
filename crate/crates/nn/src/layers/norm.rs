use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// Running-statistics decay used for inference-time normalization.
pub const BATCHNORM_DECAY: f64 = 0.99;

/// Per-channel batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub channels: usize,
    pub epsilon: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Batch statistics captured during a training forward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct BatchNormCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, epsilon: f64) -> Result<Self> {
        if channels == 0 {
            return Err(NnError::Config("batch norm needs at least one channel".into()));
        }
        if !(epsilon > 0.0) {
            return Err(NnError::Config(format!("batch norm epsilon must be > 0, got {epsilon}")));
        }
        Ok(Self {
            channels,
            epsilon,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        })
    }

    /// Normalizes with running statistics. `x` is `(rows, channels)`.
    pub(crate) fn forward_eval(&self, x: &[f64], out: &mut [f64]) {
        let c = self.channels;
        for (row, orow) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            for j in 0..c {
                let inv = 1.0 / (self.running_var[j] + self.epsilon).sqrt();
                orow[j] = self.gamma[j] * (row[j] - self.running_mean[j]) * inv + self.beta[j];
            }
        }
    }

    pub(crate) fn forward_train(&self, x: &[f64], out: &mut [f64]) -> BatchNormCache {
        let c = self.channels;
        let rows = x.len() / c;
        let m = rows as f64;
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for j in 0..c {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let mut normalized = vec![0.0; x.len()];
        for ((row, nrow), orow) in x
            .chunks_exact(c)
            .zip(normalized.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for j in 0..c {
                let xhat = (row[j] - mean[j]) / (var[j] + self.epsilon).sqrt();
                nrow[j] = xhat;
                orow[j] = self.gamma[j] * xhat + self.beta[j];
            }
        }
        BatchNormCache {
            mean,
            var,
            normalized,
        }
    }

    pub(crate) fn backward_eval(&self, grad_out: &[f64], x: &[f64], grad_gamma: &mut [f64], grad_beta: &mut [f64], grad_in: &mut [f64]) {
        let c = self.channels;
        for ((g, row), gi) in grad_out
            .chunks_exact(c)
            .zip(x.chunks_exact(c))
            .zip(grad_in.chunks_exact_mut(c))
        {
            for j in 0..c {
                let inv = 1.0 / (self.running_var[j] + self.epsilon).sqrt();
                let xhat = (row[j] - self.running_mean[j]) * inv;
                grad_gamma[j] += g[j] * xhat;
                grad_beta[j] += g[j];
                gi[j] = g[j] * self.gamma[j] * inv;
            }
        }
    }

    pub(crate) fn backward_train(
        &self,
        grad_out: &[f64],
        cache: &BatchNormCache,
        grad_gamma: &mut [f64],
        grad_beta: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let c = self.channels;
        let rows = grad_out.len() / c;
        let m = rows as f64;
        let mut sum_dxhat = vec![0.0; c];
        let mut sum_dxhat_xhat = vec![0.0; c];
        for (g, xh) in grad_out.chunks_exact(c).zip(cache.normalized.chunks_exact(c)) {
            for j in 0..c {
                grad_gamma[j] += g[j] * xh[j];
                grad_beta[j] += g[j];
                let dxhat = g[j] * self.gamma[j];
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * xh[j];
            }
        }
        for ((g, xh), gi) in grad_out
            .chunks_exact(c)
            .zip(cache.normalized.chunks_exact(c))
            .zip(grad_in.chunks_exact_mut(c))
        {
            for j in 0..c {
                let inv = 1.0 / (cache.var[j] + self.epsilon).sqrt();
                let dxhat = g[j] * self.gamma[j];
                gi[j] = inv / m * (m * dxhat - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
            }
        }
    }

    pub(crate) fn update_running(&mut self, cache: &BatchNormCache) {
        for j in 0..self.channels {
            self.running_mean[j] =
                BATCHNORM_DECAY * self.running_mean[j] + (1.0 - BATCHNORM_DECAY) * cache.mean[j];
            self.running_var[j] =
                BATCHNORM_DECAY * self.running_var[j] + (1.0 - BATCHNORM_DECAY) * cache.var[j];
        }
    }
}

/// Inverted dropout: kept activations are scaled by `1 / keep_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub keep_prob: f64,
}

impl Dropout {
    pub fn new(keep_prob: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(NnError::Config(format!(
                "dropout keep probability must be in (0, 1], got {keep_prob}"
            )));
        }
        Ok(Self { keep_prob })
    }

    pub fn is_stochastic(&self) -> bool {
        self.keep_prob < 1.0
    }

    pub(crate) fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let scale = 1.0 / self.keep_prob;
        (0..len)
            .map(|_| {
                if self.keep_prob >= 1.0 || rng.random::<f64>() < self.keep_prob {
                    scale
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(BatchNorm::new(3, 0.0).is_err());
        assert!(Dropout::new(0.0).is_err());
        assert!(Dropout::new(1.5).is_err());
        assert!(Dropout::new(1.0).is_ok());
    }

    #[test]
    fn train_normalization_has_zero_mean_unit_variance() {
        let bn = BatchNorm::new(2, 1e-12).unwrap();
        let x = [1.0, 10.0, 3.0, 20.0, 5.0, 30.0];
        let mut out = [0.0; 6];
        let cache = bn.forward_train(&x, &mut out);
        assert_eq!(cache.mean, vec![3.0, 20.0]);
        let m0: f64 = out.iter().step_by(2).sum::<f64>() / 3.0;
        let v0: f64 = out.iter().step_by(2).map(|v| v * v).sum::<f64>() / 3.0;
        assert!(m0.abs() < 1e-12);
        assert!((v0 - 1.0).abs() < 1e-9);
    }
}
