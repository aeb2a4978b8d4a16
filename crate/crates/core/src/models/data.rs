//! Lazily assembled training and evaluation batches.
//!
//! Windows are referenced by `(series, center)` and copied into a batch
//! tensor only when requested, so a full cohort never has to be
//! materialized as 721-value windows.

use std::sync::Arc;

use actisleep_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::arch::{ModelSpec, NUM_STATES};
use crate::models::features::features_from_values;
use crate::models::targets::{one_hot, sleep_distribution};
use crate::series::{smooth_values, split_by_group, DEFAULT_SMOOTH_HALF_WIDTH};
use crate::types::{LabeledSeries, SleepState, DEFAULT_CONTEXT};

/// Preprocessing applied identically at training and prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub context: usize,
    pub smooth_half_width: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            context: DEFAULT_CONTEXT,
            smooth_half_width: DEFAULT_SMOOTH_HALF_WIDTH,
        }
    }
}

impl DataConfig {
    pub fn window_len(&self) -> usize {
        2 * self.context + 1
    }
}

/// One mini-batch: inputs, one target tensor per head and the main-head
/// class of every sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: Tensor,
    pub targets: Vec<Tensor>,
    pub labels: Vec<usize>,
}

/// Anything the training loop can draw mini-batches from.
pub trait TrainingSet {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Main-head class of item `i`.
    fn label(&self, i: usize) -> usize;

    fn batch(&self, indices: &[usize]) -> Result<Batch>;
}

/// Fixed in-memory examples with hard labels, for small fixtures.
#[derive(Debug, Clone)]
pub struct InMemorySet {
    pub input_shape: (usize, usize),
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TrainingSet for InMemorySet {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let (len, ch) = self.input_shape;
        let mut input = Vec::with_capacity(indices.len() * len * ch);
        let mut target = vec![0.0; indices.len() * self.classes];
        for (r, &i) in indices.iter().enumerate() {
            input.extend_from_slice(&self.inputs[i]);
            target[r * self.classes + self.labels[i]] = 1.0;
        }
        Ok(Batch {
            input: Tensor::new(vec![indices.len(), len, ch], input)?,
            targets: vec![Tensor::new(vec![indices.len(), self.classes], target)?],
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// A series after smoothing, with a prefix count of asleep epochs.
#[derive(Debug, Clone)]
pub struct PreparedSeries {
    pub patient_id: String,
    pub activity: Vec<f64>,
    pub states: Vec<SleepState>,
    asleep_prefix: Vec<u32>,
}

impl PreparedSeries {
    pub fn new(series: &LabeledSeries, data: &DataConfig) -> Result<Self> {
        let states = series.states()?;
        let activity = smooth_values(&series.activity(), data.smooth_half_width);
        let mut asleep_prefix = Vec::with_capacity(states.len() + 1);
        asleep_prefix.push(0);
        for s in &states {
            asleep_prefix.push(asleep_prefix.last().unwrap() + u32::from(s.is_asleep()));
        }
        Ok(Self {
            patient_id: series.patient_id().to_string(),
            activity,
            states,
            asleep_prefix,
        })
    }

    /// Asleep epochs in `[lo, hi)`.
    pub fn asleep_between(&self, lo: usize, hi: usize) -> usize {
        (self.asleep_prefix[hi] - self.asleep_prefix[lo]) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub series: usize,
    pub center: usize,
}

/// Windows over prepared series, rendered for one model kind.
#[derive(Debug, Clone)]
pub struct WindowSet {
    series: Arc<[PreparedSeries]>,
    items: Vec<WindowRef>,
    context: usize,
    features: bool,
    aux_head: bool,
}

impl WindowSet {
    pub fn new(series: Arc<[PreparedSeries]>, items: Vec<WindowRef>, context: usize, spec: &ModelSpec) -> Result<Self> {
        let window = 2 * context + 1;
        if !spec.uses_features() && spec.input_len() != window {
            return Err(Error::Config(format!(
                "model expects {}-value windows but context {context} gives {window}",
                spec.input_len()
            )));
        }
        Ok(Self {
            series,
            items,
            context,
            features: spec.uses_features(),
            aux_head: spec.head_weights().len() == 2,
        })
    }

    pub fn items(&self) -> &[WindowRef] {
        &self.items
    }

    pub fn series(&self) -> &[PreparedSeries] {
        &self.series
    }

    /// Keeps every `stride`-th item.
    pub fn strided(&self, stride: usize) -> Self {
        Self {
            items: self.items.iter().copied().step_by(stride.max(1)).collect(),
            ..self.clone()
        }
    }

    pub fn state(&self, i: usize) -> SleepState {
        let r = self.items[i];
        self.series[r.series].states[r.center]
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let r = self.items[i];
        &self.series[r.series].activity[r.center - self.context..=r.center + self.context]
    }
}

impl TrainingSet for WindowSet {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, i: usize) -> usize {
        self.state(i).index()
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let n = indices.len();
        let mut input = Vec::new();
        let mut main = Vec::with_capacity(n * NUM_STATES);
        let mut aux = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for &i in indices {
            let r = self.items[i];
            let s = &self.series[r.series];
            let w = self.window(i);
            if self.features {
                input.extend(features_from_values(w)?);
            } else {
                input.extend_from_slice(w);
            }
            let state = s.states[r.center];
            main.extend_from_slice(&one_hot(state));
            labels.push(state.index());
            if self.aux_head {
                let asleep = s.asleep_between(r.center - self.context, r.center + self.context + 1);
                aux.extend_from_slice(&sleep_distribution(asleep, 2 * self.context + 1));
            }
        }
        let input = if self.features {
            let f = input.len() / n.max(1);
            Tensor::new(vec![n, 1, f], input)?
        } else {
            Tensor::new(vec![n, 2 * self.context + 1, 1], input)?
        };
        let mut targets = vec![Tensor::new(vec![n, NUM_STATES], main)?];
        if self.aux_head {
            targets.push(Tensor::new(vec![n, 2], aux)?);
        }
        Ok(Batch { input, targets, labels })
    }
}

/// How windows are drawn from the prepared series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Stride over the held-out windows used for per-epoch monitoring.
    pub monitor_stride: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            monitor_stride: 8,
        }
    }
}

/// Every window center of every series, split into per-patient contiguous
/// train and test blocks.
pub fn split_windows(series: &[PreparedSeries], context: usize, train_fraction: f64, seed: u64) -> Result<(Vec<WindowRef>, Vec<WindowRef>)> {
    let mut items = Vec::new();
    for (si, s) in series.iter().enumerate() {
        let n = s.activity.len();
        if n > 2 * context {
            items.extend((context..n - context).map(|center| WindowRef { series: si, center }));
        }
    }
    if items.is_empty() {
        return Err(Error::SeriesTooShort {
            len: series.iter().map(|s| s.activity.len()).max().unwrap_or(0),
            required: 2 * context + 1,
        });
    }
    split_by_group(items, train_fraction, seed, |r| series[r.series].patient_id.clone())
}

/// Per-epoch subsampling: item `i` is kept with probability `keep[label(i)]`.
pub fn sample_epoch(set: &dyn TrainingSet, keep: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..set.len())
        .filter(|&i| {
            let p = keep.get(set.label(i)).copied().unwrap_or(1.0);
            p >= 1.0 || rng.random_bool(p.max(0.0))
        })
        .collect()
}

/// Deterministic stream for a derived purpose.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
