use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::linalg::{gemm, Layout};
use crate::tensor::Tensor;

/// 1-D convolution (cross-correlation, valid padding).
///
/// `weights` is laid out `(kernel_width, in_channels, out_channels)` so that
/// `z[i, k] = sum_f sum_n w[n, f, k] * r[i*stride + n, f] + b[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn new(
        kernel_width: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel_width == 0 || in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "conv1d needs positive sizes (width {kernel_width}, in {in_channels}, out {out_channels}, stride {stride})"
            )));
        }
        Ok(Self {
            kernel_width,
            in_channels,
            out_channels,
            stride,
            weights: vec![0.0; kernel_width * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn from_parts(
        kernel_width: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut layer = Self::new(kernel_width, in_channels, out_channels, stride)?;
        if weights.len() != layer.weights.len() || bias.len() != out_channels {
            return Err(NnError::Shape(format!(
                "conv1d expects {} weights and {} biases, got {} and {}",
                layer.weights.len(),
                out_channels,
                weights.len(),
                bias.len()
            )));
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    #[inline]
    pub fn weight(&self, n: usize, f: usize, k: usize) -> f64 {
        self.weights[(n * self.in_channels + f) * self.out_channels + k]
    }

    pub fn fan_in(&self) -> usize {
        self.kernel_width * self.in_channels
    }

    /// Fan-in scaled uniform initialization, bias zero.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / self.fan_in() as f64).sqrt();
        for w in &mut self.weights {
            *w = rng.random_range(-limit..limit);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        if len < self.kernel_width {
            return Err(NnError::Shape(format!(
                "conv1d input length {len} shorter than kernel width {}",
                self.kernel_width
            )));
        }
        Ok((len - self.kernel_width) / self.stride + 1)
    }

    fn patch_layout(&self, out_len: usize) -> Layout {
        // Row i of the implicit patch matrix starts at input[i*stride*F] and
        // covers kernel_width*F contiguous values.
        Layout {
            rows: out_len,
            cols: self.kernel_width * self.in_channels,
            rs: self.stride * self.in_channels,
            cs: 1,
        }
    }

    /// Forward pass on one `(len, in_channels)` sample into `out`
    /// (`(out_len, out_channels)`).
    pub(crate) fn forward_sample(&self, input: &[f64], len: usize, out: &mut [f64]) {
        let out_len = (len - self.kernel_width) / self.stride + 1;
        let k = self.out_channels;
        for row in out.chunks_exact_mut(k) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            1.0,
            input,
            self.patch_layout(out_len),
            &self.weights,
            Layout::row_major(self.kernel_width * self.in_channels, k),
            1.0,
            out,
            Layout::row_major(out_len, k),
        );
    }

    /// Accumulates parameter gradients and, when `grad_input` is given,
    /// writes (overwrites) the input gradient for one sample.
    pub(crate) fn backward_sample(
        &self,
        input: &[f64],
        len: usize,
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        grad_input: Option<&mut [f64]>,
        scratch: &mut Vec<f64>,
    ) {
        let out_len = (len - self.kernel_width) / self.stride + 1;
        let k = self.out_channels;
        let nf = self.kernel_width * self.in_channels;
        let patches = self.patch_layout(out_len);
        let patches_t = Layout {
            rows: patches.cols,
            cols: patches.rows,
            rs: patches.cs,
            cs: patches.rs,
        };
        gemm(
            1.0,
            input,
            patches_t,
            grad_out,
            Layout::row_major(out_len, k),
            1.0,
            grad_w,
            Layout::row_major(nf, k),
        );
        for row in grad_out.chunks_exact(k) {
            for (gb, g) in grad_b.iter_mut().zip(row) {
                *gb += g;
            }
        }
        if let Some(grad_input) = grad_input {
            scratch.clear();
            scratch.resize(out_len * nf, 0.0);
            gemm(
                1.0,
                grad_out,
                Layout::row_major(out_len, k),
                &self.weights,
                Layout::transposed(nf, k),
                0.0,
                scratch,
                Layout::row_major(out_len, nf),
            );
            grad_input.iter_mut().for_each(|g| *g = 0.0);
            let step = self.stride * self.in_channels;
            for (i, patch) in scratch.chunks_exact(nf).enumerate() {
                let dst = &mut grad_input[i * step..i * step + nf];
                for (d, s) in dst.iter_mut().zip(patch) {
                    *d += s;
                }
            }
        }
    }
}

/// Convolves a single `(length, channels)` feature map.
pub fn conv1d_forward(input: &Tensor, layer: &Conv1d) -> Result<Tensor> {
    let (len, channels) = match input.shape() {
        [len, ch] => (*len, *ch),
        [len] => (*len, 1),
        other => {
            return Err(NnError::Shape(format!(
                "conv1d expects a (length, channels) map, got {other:?}"
            )))
        }
    };
    if channels != layer.in_channels {
        return Err(NnError::Shape(format!(
            "conv1d expects {} input channels, got {channels}",
            layer.in_channels
        )));
    }
    let out_len = layer.output_len(len)?;
    let mut out = vec![0.0; out_len * layer.out_channels];
    layer.forward_sample(input.data(), len, &mut out);
    Tensor::new(vec![out_len, layer.out_channels], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_kernel_selects_element() {
        let layer = Conv1d::from_parts(2, 1, 1, 1, vec![1.0, 0.0], vec![0.0]).unwrap();
        let out = conv1d_forward(&Tensor::from_series(&[1.0, 2.0, 3.0, 4.0]), &layer).unwrap();
        assert_eq!(out.shape(), &[3, 1]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Conv1d::new(3, 2, 4, 1).unwrap();
        layer.init(&mut rng);
        layer.bias = vec![0.5, -1.0, 2.0, 0.0];
        let out = conv1d_forward(&Tensor::zeros(vec![10, 2]), &layer).unwrap();
        for row in out.data().chunks(4) {
            assert_eq!(row, &[0.5, -1.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn short_input_is_shape_error() {
        let layer = Conv1d::new(5, 1, 1, 1).unwrap();
        let err = conv1d_forward(&Tensor::from_series(&[1.0; 4]), &layer).unwrap_err();
        assert!(matches!(err, NnError::Shape(_)));
    }

    #[test]
    fn stride_two_skips_positions() {
        let layer = Conv1d::from_parts(1, 1, 1, 2, vec![1.0], vec![0.0]).unwrap();
        let out = conv1d_forward(&Tensor::from_series(&[1.0, 2.0, 3.0, 4.0, 5.0]), &layer).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 5.0]);
    }
}
