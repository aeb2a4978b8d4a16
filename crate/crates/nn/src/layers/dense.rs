use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::linalg::{gemm, Layout};
use crate::tensor::Tensor;

/// Fully connected layer, `weights` laid out `(in_units, out_units)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_units: usize,
    pub out_units: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_units: usize, out_units: usize) -> Result<Self> {
        if in_units == 0 || out_units == 0 {
            return Err(NnError::Config(format!(
                "dense layer needs positive sizes (got {in_units} -> {out_units})"
            )));
        }
        Ok(Self {
            in_units,
            out_units,
            weights: vec![0.0; in_units * out_units],
            bias: vec![0.0; out_units],
        })
    }

    pub fn from_parts(
        in_units: usize,
        out_units: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != in_units * out_units || bias.len() != out_units {
            return Err(NnError::Shape(format!(
                "dense {in_units}x{out_units} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_units,
            out_units,
            weights,
            bias,
        })
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / self.in_units as f64).sqrt();
        for w in &mut self.weights {
            *w = rng.random_range(-limit..limit);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    /// `out (n, out) = x (n, in) * W + b`.
    pub(crate) fn forward_batch(&self, x: &[f64], n: usize, out: &mut [f64]) {
        for row in out.chunks_exact_mut(self.out_units) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            1.0,
            x,
            Layout::row_major(n, self.in_units),
            &self.weights,
            Layout::row_major(self.in_units, self.out_units),
            1.0,
            out,
            Layout::row_major(n, self.out_units),
        );
    }

    pub(crate) fn backward_batch(
        &self,
        x: &[f64],
        n: usize,
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        gemm(
            1.0,
            x,
            Layout::transposed(n, self.in_units),
            grad_out,
            Layout::row_major(n, self.out_units),
            1.0,
            grad_w,
            Layout::row_major(self.in_units, self.out_units),
        );
        for row in grad_out.chunks_exact(self.out_units) {
            for (gb, g) in grad_b.iter_mut().zip(row) {
                *gb += g;
            }
        }
        if let Some(grad_input) = grad_input {
            gemm(
                1.0,
                grad_out,
                Layout::row_major(n, self.out_units),
                &self.weights,
                Layout::transposed(self.in_units, self.out_units),
                0.0,
                grad_input,
                Layout::row_major(n, self.in_units),
            );
        }
    }
}

/// Affine map of a single `(units,)` vector.
pub fn dense_forward(input: &Tensor, layer: &Dense) -> Result<Tensor> {
    if input.len() != layer.in_units {
        return Err(NnError::Shape(format!(
            "dense layer expects {} inputs, got {}",
            layer.in_units,
            input.len()
        )));
    }
    let mut out = vec![0.0; layer.out_units];
    layer.forward_batch(input.data(), 1, &mut out);
    Ok(Tensor::vector(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_affine() {
        let layer = Dense::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]).unwrap();
        let out = dense_forward(&Tensor::vector(vec![1.0, -1.0]), &layer).unwrap();
        // [1, -1] * [[1,2],[3,4]] = [-2, -2]
        assert_eq!(out.data(), &[-1.5, -2.5]);
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let layer = Dense::new(3, 2).unwrap();
        assert!(dense_forward(&Tensor::vector(vec![1.0, 2.0]), &layer).is_err());
    }
}
