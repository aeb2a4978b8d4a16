//! Mini-batch SGD training loop.

use std::time::Instant;

use actisleep_nn::gradcheck::{batch_loss, CheckSample};
use actisleep_nn::{argmax, Mode, NetworkGraph, ParamBlock, SgdMomentum, StepDecay, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, ConvergenceCurve, EpochRecord};
use crate::models::data::{derived_rng, sample_epoch, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub schedule: StepDecay,
    pub epochs: usize,
    pub seed: u64,
    /// Scale each sample's main-head loss by the inverse frequency of its class.
    pub class_weighting: bool,
    /// Per-class probability that a training item is drawn in a given epoch.
    /// Empty means every item, every epoch.
    pub class_keep: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            momentum: 0.9,
            schedule: StepDecay::default(),
            epochs: 20,
            seed: 0,
            class_weighting: false,
            class_keep: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.schedule.base > 0.0 && self.schedule.factor > 0.0) {
            return Err(Error::Config("learning rate schedule must be positive".into()));
        }
        if self.class_keep.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("class_keep entries must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best held-out accuracy (earliest on ties).
    pub best_blocks: Vec<ParamBlock>,
    pub best_epoch: usize,
    pub curve: ConvergenceCurve,
    pub steps: usize,
}

/// Main-head loss and accuracy of a frozen graph over a whole set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy().unwrap_or(0.0)
    }
}

pub const EVAL_BATCH: usize = 64;

pub fn evaluate(graph: &NetworkGraph, set: &dyn TrainingSet, head_weights: &[f64]) -> Result<Evaluation> {
    let mut confusion = ConfusionMatrix::default();
    let mut loss = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = set.batch(chunk)?;
        let outputs = graph.predict(&batch.input)?;
        let sample = CheckSample {
            input: batch.input,
            targets: batch.targets,
            head_weights: head_weights.to_vec(),
        };
        let (l, _) = batch_loss(&outputs, &sample)?;
        loss += l * chunk.len() as f64;
        for (r, &label) in batch.labels.iter().enumerate() {
            confusion.add_index(argmax(outputs[0].row(r)), label);
        }
    }
    Ok(Evaluation {
        confusion,
        loss: loss / set.len().max(1) as f64,
    })
}

fn class_weights(set: &dyn TrainingSet, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for i in 0..set.len() {
        counts[set.label(i)] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { set.len() as f64 / (present * c as f64) })
        .collect()
}

/// Trains `graph` in place and leaves it holding the best-epoch parameters.
///
/// `head_weights` gives the loss weight of each output head; the total loss
/// is their weighted sum of mean cross entropies. Monitoring uses `monitor`
/// (or the training set when `monitor` is empty).
pub fn train(
    graph: &mut NetworkGraph,
    model_name: &str,
    train_set: &dyn TrainingSet,
    monitor: &dyn TrainingSet,
    head_weights: &[f64],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let monitor: &dyn TrainingSet = if monitor.is_empty() { train_set } else { monitor };
    let classes = graph.output_shapes()[0].units();
    let weights = config.class_weighting.then(|| class_weights(train_set, classes));

    let mut shuffle_rng = derived_rng(config.seed, 1);
    graph.seed_dropout(derived_rng(config.seed, 2).random());
    let mut opt = SgdMomentum::for_params(config.schedule.base, config.momentum, &graph.parameters())?;
    let mut curve = ConvergenceCurve::new(model_name);
    let mut best: Option<(f64, usize, Vec<ParamBlock>)> = None;
    let mut steps = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = config.schedule.rate(epoch - 1);
        opt.learning_rate = lr;
        graph.set_mode(Mode::Train);

        let mut order = if config.class_keep.is_empty() {
            (0..train_set.len()).collect()
        } else {
            sample_epoch(train_set, &config.class_keep, &mut shuffle_rng)
        };
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.batch(chunk)?;
            let mut targets = batch.targets;
            if let Some(w) = &weights {
                let main = &mut targets[0];
                for (r, &label) in batch.labels.iter().enumerate() {
                    main.row_mut(r).iter_mut().for_each(|t| *t *= w[label]);
                }
            }
            let outputs = graph.forward(&batch.input)?;
            let sample = CheckSample {
                input: Tensor::zeros(vec![0]),
                targets,
                head_weights: head_weights.to_vec(),
            };
            let (loss, head_grads) = batch_loss(&outputs, &sample)?;
            if !loss.is_finite() || outputs.iter().any(|o| !o.all_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += batch
                .labels
                .iter()
                .enumerate()
                .filter(|(r, &label)| argmax(outputs[0].row(*r)) == label)
                .count();
            let grads = graph.backward(&head_grads)?;
            // Max pooling and ReLU can hide a NaN from the outputs while it
            // still reaches the gradients.
            if grads.blocks.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            opt.step(&mut graph.parameters_mut(), &grads.blocks)?;
            steps += 1;
        }

        graph.set_mode(Mode::Eval);
        let eval = evaluate(graph, monitor, head_weights)?;
        let seen = order.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_accuracy: correct as f64 / seen,
            test_accuracy: eval.accuracy(),
            train_loss: loss_sum / seen,
            test_loss: eval.loss,
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|(acc, _, _)| record.test_accuracy > *acc) {
            best = Some((record.test_accuracy, epoch, graph.named_blocks()));
        }
        curve.push(record)?;
    }

    let (_, best_epoch, best_blocks) = best.expect("at least one epoch");
    graph.load_blocks(&best_blocks)?;
    graph.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        best_blocks,
        best_epoch,
        curve,
        steps,
    })
}
