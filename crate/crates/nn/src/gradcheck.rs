//! Central finite-difference verification of `NetworkGraph::backward`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::softmax;
use crate::error::{NnError, Result};
use crate::graph::{Gradients, NetworkGraph};
use crate::loss::{cross_entropy, softmax_cross_entropy};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so that near-zero gradients are
/// compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// A batch with one target distribution per head and sample.
#[derive(Debug, Clone)]
pub struct CheckSample {
    pub input: Tensor,
    /// `targets[head]` is a `(batch, classes)` tensor of distributions.
    pub targets: Vec<Tensor>,
    pub head_weights: Vec<f64>,
}

impl CheckSample {
    pub fn new(input: Tensor, targets: Vec<Tensor>) -> Self {
        let head_weights = vec![1.0; targets.len()];
        Self {
            input,
            targets,
            head_weights,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub block: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checks: Vec<ParamCheck>,
    /// Candidates discarded because the perturbation flipped a ReLU or a
    /// pooling decision, where finite differences are meaningless.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.max_relative_error < self.tolerance
    }
}

/// Mean weighted cross entropy over the batch and the analytic head
/// gradients of that loss.
pub fn batch_loss(outputs: &[Tensor], sample: &CheckSample) -> Result<(f64, Vec<Tensor>)> {
    if outputs.len() != sample.targets.len() || sample.head_weights.len() != outputs.len() {
        return Err(NnError::Shape(format!(
            "{} outputs, {} targets, {} head weights",
            outputs.len(),
            sample.targets.len(),
            sample.head_weights.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for ((logits, target), &w) in outputs.iter().zip(&sample.targets).zip(&sample.head_weights) {
        if logits.shape() != target.shape() {
            return Err(NnError::Shape(format!(
                "logits {:?} vs targets {:?}",
                logits.shape(),
                target.shape()
            )));
        }
        let n = logits.dim0();
        let mut g = Vec::with_capacity(logits.len());
        let mut head = 0.0;
        for b in 0..n {
            let (loss, grad) = softmax_cross_entropy(logits.row(b), target.row(b))?;
            head += loss / n as f64;
            g.extend(grad.into_iter().map(|v| w * v / n as f64));
        }
        // Per-head sums keep the weighted total exactly additive over heads.
        total += w * head;
        grads.push(Tensor::new(logits.shape().to_vec(), g)?);
    }
    Ok((total, grads))
}

fn eval_loss(graph: &NetworkGraph, sample: &CheckSample) -> Result<f64> {
    let outputs = graph.predict(&sample.input)?;
    let mut total = 0.0;
    for ((logits, target), &w) in outputs.iter().zip(&sample.targets).zip(&sample.head_weights) {
        let n = logits.dim0();
        let mut head = 0.0;
        for b in 0..n {
            head += cross_entropy(&softmax(logits.row(b)), target.row(b))? / n as f64;
        }
        total += w * head;
    }
    Ok(total)
}

/// Analytic gradients of the sample loss.
pub fn analytic_gradients(graph: &mut NetworkGraph, sample: &CheckSample) -> Result<Gradients> {
    let outputs = graph.forward(&sample.input)?;
    let (_, head_grads) = batch_loss(&outputs, sample)?;
    graph.backward(&head_grads)
}

/// Runs [`analytic_gradients`] then [`compare_gradients`].
pub fn grad_check(
    graph: &mut NetworkGraph,
    sample: &CheckSample,
    config: &CheckConfig,
) -> Result<CheckReport> {
    if !graph.is_deterministic() {
        return Err(NnError::NonDeterministic);
    }
    let analytic = analytic_gradients(graph, sample)?;
    compare_gradients(graph, sample, &analytic, config)
}

/// Compares supplied gradients against central differences on a random,
/// block-stratified subset of parameters.
pub fn compare_gradients(
    graph: &mut NetworkGraph,
    sample: &CheckSample,
    analytic: &Gradients,
    config: &CheckConfig,
) -> Result<CheckReport> {
    if !graph.is_deterministic() {
        return Err(NnError::NonDeterministic);
    }
    let sizes: Vec<usize> = graph.parameters().iter().map(|p| p.len()).collect();
    if analytic.blocks.len() != sizes.len()
        || analytic.blocks.iter().zip(&sizes).any(|(b, &s)| b.len() != s)
    {
        return Err(NnError::Shape("gradients do not match parameters".into()));
    }

    // Round-robin over blocks so small blocks (biases, kernels) are covered.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut queues: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&s| {
            let mut idx: Vec<usize> = (0..s).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let base_signature = graph.kink_signature(&sample.input)?;
    let h = config.step;
    let mut checks = Vec::new();
    let mut skipped = 0;
    let mut block = 0;
    let mut exhausted = 0;
    while checks.len() < config.samples && exhausted < queues.len() {
        let b = block % queues.len();
        block += 1;
        let Some(index) = queues[b].pop() else {
            exhausted += 1;
            continue;
        };
        exhausted = 0;
        let original = graph.parameters()[b][index];
        graph.parameters_mut()[b][index] = original + h;
        let plus = eval_loss(graph, sample)?;
        let sig_plus = graph.kink_signature(&sample.input)?;
        graph.parameters_mut()[b][index] = original - h;
        let minus = eval_loss(graph, sample)?;
        let sig_minus = graph.kink_signature(&sample.input)?;
        graph.parameters_mut()[b][index] = original;
        if sig_plus != base_signature || sig_minus != base_signature {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.blocks[b][index];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        checks.push(ParamCheck {
            block: b,
            index,
            analytic: a,
            numeric,
            relative_error: (a - numeric).abs() / denom,
        });
    }
    let max = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let mean = if checks.is_empty() {
        0.0
    } else {
        checks.iter().map(|c| c.relative_error).sum::<f64>() / checks.len() as f64
    };
    Ok(CheckReport {
        checks,
        skipped_kinks: skipped,
        max_relative_error: max,
        mean_relative_error: mean,
        step: config.step,
        tolerance: config.tolerance,
    })
}
