use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Per-channel max pooling over a `(length, channels)` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub width: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn new(width: usize, stride: usize) -> Result<Self> {
        if width < 1 || stride < 1 {
            return Err(NnError::Config(format!(
                "max pool needs width >= 1 and stride >= 1 (got {width}, {stride})"
            )));
        }
        Ok(Self { width, stride })
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        if len < self.width {
            return Err(NnError::Shape(format!(
                "max pool input length {len} shorter than width {}",
                self.width
            )));
        }
        Ok((len - self.width) / self.stride + 1)
    }

    /// Writes pooled values and the winning input row per output cell.
    /// Ties go to the earliest position.
    pub(crate) fn forward_sample(
        &self,
        input: &[f64],
        len: usize,
        channels: usize,
        out: &mut [f64],
        argmax: &mut [u32],
    ) {
        let out_len = (len - self.width) / self.stride + 1;
        for i in 0..out_len {
            let start = i * self.stride;
            for c in 0..channels {
                let mut best = start;
                let mut best_val = input[start * channels + c];
                for t in start + 1..start + self.width {
                    let v = input[t * channels + c];
                    if v > best_val {
                        best_val = v;
                        best = t;
                    }
                }
                out[i * channels + c] = best_val;
                argmax[i * channels + c] = best as u32;
            }
        }
    }

    /// Routes each upstream gradient to its window's winning position.
    pub(crate) fn backward_sample(
        grad_out: &[f64],
        argmax: &[u32],
        channels: usize,
        grad_input: &mut [f64],
    ) {
        grad_input.iter_mut().for_each(|g| *g = 0.0);
        for (j, (g, &t)) in grad_out.iter().zip(argmax).enumerate() {
            let c = j % channels;
            grad_input[t as usize * channels + c] += g;
        }
    }
}

/// Pools a single `(length, channels)` map; returns values and argmax rows.
pub fn maxpool_forward(
    input: &Tensor,
    width: usize,
    stride: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let pool = MaxPool1d::new(width, stride)?;
    let (len, channels) = match input.shape() {
        [len, ch] => (*len, *ch),
        [len] => (*len, 1),
        other => {
            return Err(NnError::Shape(format!(
                "max pool expects a (length, channels) map, got {other:?}"
            )))
        }
    };
    let out_len = pool.output_len(len)?;
    let mut out = vec![0.0; out_len * channels];
    let mut argmax = vec![0u32; out_len * channels];
    pool.forward_sample(input.data(), len, channels, &mut out, &mut argmax);
    Ok((Tensor::new(vec![out_len, channels], out)?, argmax))
}

/// Gradient of [`maxpool_forward`] with respect to its input.
pub fn maxpool_backward(
    grad_out: &Tensor,
    argmax: &[u32],
    input_len: usize,
) -> Result<Tensor> {
    let channels = match grad_out.shape() {
        [_, ch] => *ch,
        [_] => 1,
        other => return Err(NnError::Shape(format!("bad gradient shape {other:?}"))),
    };
    if argmax.len() != grad_out.len() {
        return Err(NnError::Shape("argmax does not match gradient".into()));
    }
    let mut grad_in = vec![0.0; input_len * channels];
    MaxPool1d::backward_sample(grad_out.data(), argmax, channels, &mut grad_in);
    Tensor::new(vec![input_len, channels], grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_pool_to_maxima() {
        let (out, arg) = maxpool_forward(&Tensor::from_series(&[1.0, 3.0, 2.0, 5.0]), 2, 2).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 3]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let (out, _) = maxpool_forward(&Tensor::from_series(&[7.0; 9]), 3, 2).unwrap();
        assert_eq!(out.data(), &[7.0; 4]);
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(maxpool_forward(&Tensor::from_series(&[1.0]), 0, 1).is_err());
    }

    #[test]
    fn backward_routes_to_winner() {
        let input = Tensor::from_series(&[1.0, 3.0, 2.0, 5.0]);
        let (_, arg) = maxpool_forward(&input, 2, 2).unwrap();
        let g = maxpool_backward(&Tensor::from_series(&[10.0, 20.0]), &arg, 4).unwrap();
        assert_eq!(g.data(), &[0.0, 10.0, 0.0, 20.0]);
    }
}
