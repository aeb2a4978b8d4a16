use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// Stochastic gradient descent with classical (heavy-ball) momentum:
/// `v <- momentum * v - lr * g`, then `p <- p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, shapes: &[usize]) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(NnError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Optimizer with zero velocity shaped like `params`.
    pub fn for_params(learning_rate: f64, momentum: f64, params: &[&[f64]]) -> Result<Self> {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(learning_rate, momentum, &shapes)
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} blocks, got {} parameters and {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), v)) in params.iter().zip(grads).zip(&self.velocity).enumerate() {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(NnError::Shape(format!(
                    "block {i}: velocity {} vs parameter {} vs gradient {}",
                    v.len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pj, gj), vj) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vj = mu * *vj - lr * gj;
                *pj += *vj;
            }
        }
        Ok(())
    }
}

/// Step decay: `base * factor^(epoch / every)` with zero-based epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            base: 0.01,
            factor: 0.5,
            every: 5,
        }
    }
}

impl StepDecay {
    pub fn rate(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.base;
        }
        self.base * self.factor.powi((epoch / self.every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_velocity_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut opt = SgdMomentum::new(0.1, 0.9, &[2]).unwrap();
        opt.step(&mut [p.as_mut_slice()], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn momentum_zero_is_plain_descent() {
        let mut p = vec![0.3, 0.7, -1.1];
        let g = vec![0.123, -4.5, 1e-3];
        let expected: Vec<f64> = p.iter().zip(&g).map(|(p, g)| p - 0.05 * g).collect();
        let mut opt = SgdMomentum::new(0.05, 0.0, &[3]).unwrap();
        opt.step(&mut [p.as_mut_slice()], &[g]).unwrap();
        assert_eq!(p, expected);
    }

    #[test]
    fn two_steps_constant_gradient() {
        // v1 = -lr g; v2 = -mu lr g - lr g; total = -lr g (2 + mu).
        let (lr, mu, g) = (0.5, 0.9, 2.0);
        let mut p = vec![0.0];
        let mut opt = SgdMomentum::new(lr, mu, &[1]).unwrap();
        opt.step(&mut [p.as_mut_slice()], &[vec![g]]).unwrap();
        opt.step(&mut [p.as_mut_slice()], &[vec![g]]).unwrap();
        assert!((p[0] - (-lr * g * (2.0 + mu))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = vec![0.0; 3];
        let mut opt = SgdMomentum::new(0.1, 0.9, &[2]).unwrap();
        assert!(opt.step(&mut [p.as_mut_slice()], &[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn step_decay_halves_every_five() {
        let s = StepDecay::default();
        assert_eq!(s.rate(0), 0.01);
        assert_eq!(s.rate(4), 0.01);
        assert_eq!(s.rate(5), 0.005);
        assert_eq!(s.rate(10), 0.0025);
    }
}
