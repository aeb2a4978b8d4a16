//! Confusion matrices, per-state precision and recall, and convergence
//! curve comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SleepState;

/// Counts indexed `[predicted][actual]` by state code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 4]; 4]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[[u64; 4]; 4] {
        &self.counts
    }

    pub fn get(&self, predicted: SleepState, actual: SleepState) -> u64 {
        self.counts[predicted.index()][actual.index()]
    }

    pub fn add(&mut self, predicted: SleepState, actual: SleepState) {
        self.counts[predicted.index()][actual.index()] += 1;
    }

    pub fn add_index(&mut self, predicted: usize, actual: usize) {
        self.counts[predicted][actual] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Samples predicted as `state`.
    pub fn row_sum(&self, state: SleepState) -> u64 {
        self.counts[state.index()].iter().sum()
    }

    /// Samples whose true state is `state`.
    pub fn col_sum(&self, state: SleepState) -> u64 {
        self.counts.iter().map(|r| r[state.index()]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| self.correct() as f64 / t as f64)
    }
}

pub fn confusion_matrix(predicted: &[SleepState], actual: &[SleepState]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Invalid("confusion matrix over zero samples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        cm.add(p, a);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub state: SleepState,
    /// `None` when nothing was predicted as this state.
    pub precision: Option<f64>,
    /// `None` when the state never occurs.
    pub recall: Option<f64>,
    /// `2TP / (2TP + FP + FN)`; `None` only when the state is absent from
    /// both predictions and labels.
    pub f1: Option<f64>,
    pub predicted: u64,
    pub actual: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub states: Vec<StateMetrics>,
    /// Means over the states where the metric is defined.
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub accuracy: f64,
    pub total: u64,
    /// Human-readable notes on undefined metrics.
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn state(&self, s: SleepState) -> &StateMetrics {
        &self.states[s.index()]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn precision_recall(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("confusion matrix is empty".into()));
    }
    let mut flags = Vec::new();
    let states: Vec<StateMetrics> = SleepState::ALL
        .iter()
        .map(|&s| {
            let tp = cm.get(s, s);
            let predicted = cm.row_sum(s);
            let actual = cm.col_sum(s);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            if precision.is_none() {
                flags.push(format!("precision undefined for {s}: never predicted"));
            }
            if recall.is_none() {
                flags.push(format!("recall undefined for {s}: never observed"));
            }
            let f1 = ratio(2 * tp, predicted + actual);
            StateMetrics {
                state: s,
                precision,
                recall,
                f1,
                predicted,
                actual,
            }
        })
        .collect();
    Ok(MetricsReport {
        macro_precision: mean_defined(states.iter().map(|m| m.precision)),
        macro_recall: mean_defined(states.iter().map(|m| m.recall)),
        macro_f1: mean_defined(states.iter().map(|m| m.f1)),
        accuracy: cm.correct() as f64 / total as f64,
        total,
        states,
        flags,
    })
}

/// Round half away from zero to three decimals, as printed in reports.
pub fn format3(x: f64) -> String {
    format!("{:.3}", (x * 1000.0).round() / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub model: String,
    pub records: Vec<EpochRecord>,
}

impl ConvergenceCurve {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Invalid(format!(
                    "epoch {} recorded after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// First epoch whose test accuracy reaches `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.test_accuracy >= threshold)
            .map(|r| r.epoch)
    }
}

pub const CURVE_THRESHOLDS: [f64; 3] = [0.90, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub model: String,
    /// Aligned with `CURVE_THRESHOLDS`; `None` means not reached.
    pub epochs_to_threshold: Vec<Option<usize>>,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
}

pub fn compare_curves(curves: &[ConvergenceCurve]) -> Result<Vec<CurveSummary>> {
    if curves.is_empty() {
        return Err(Error::Invalid("no curves to compare".into()));
    }
    curves
        .iter()
        .map(|c| {
            let last = c
                .records
                .last()
                .ok_or_else(|| Error::Invalid(format!("curve `{}` is empty", c.model)))?;
            Ok(CurveSummary {
                model: c.model.clone(),
                epochs_to_threshold: CURVE_THRESHOLDS.iter().map(|&t| c.epochs_to(t)).collect(),
                final_test_accuracy: last.test_accuracy,
                best_test_accuracy: c.records.iter().map(|r| r.test_accuracy).fold(f64::MIN, f64::max),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use SleepState::*;

    #[test]
    fn diagonal_and_single_pair() {
        let cm = confusion_matrix(&[Wake, Sleep, Siesta], &[Wake, Sleep, Siesta]).unwrap();
        assert_eq!(cm.correct(), 3);
        let cm = confusion_matrix(&[Sleep], &[Wake]).unwrap();
        assert_eq!(cm.get(Sleep, Wake), 1);
        assert_eq!(cm.total(), 1);
        assert!(confusion_matrix(&[Sleep], &[]).is_err());
    }

    #[test]
    fn identity_metrics() {
        let mut c = [[0u64; 4]; 4];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 3 + i as u64;
        }
        let r = precision_recall(&ConfusionMatrix::new(c)).unwrap();
        for m in &r.states {
            assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
        assert_eq!(r.macro_f1, Some(1.0));
        assert!(r.flags.is_empty());
    }

    #[test]
    fn undefined_is_flagged_not_zero() {
        let cm = confusion_matrix(&[Wake, Wake], &[Wake, Sleep]).unwrap();
        let r = precision_recall(&cm).unwrap();
        assert_eq!(r.state(Sleep).precision, None);
        assert_eq!(r.state(Sleep).recall, Some(0.0));
        assert_eq!(r.state(Siesta).f1, None);
        assert_eq!(r.flags.len(), 5);
    }

    fn curve(name: &str, acc: &[f64]) -> ConvergenceCurve {
        let mut c = ConvergenceCurve::new(name);
        for (i, &a) in acc.iter().enumerate() {
            c.push(EpochRecord {
                epoch: i + 1,
                train_accuracy: a,
                test_accuracy: a,
                train_loss: 1.0 - a,
                test_loss: 1.0 - a,
                learning_rate: 0.01,
                seconds: 0.0,
            })
            .unwrap();
        }
        c
    }

    #[test]
    fn thresholds() {
        let s = compare_curves(&[curve("a", &[0.5, 0.91, 0.95, 0.96])]).unwrap();
        assert_eq!(s[0].epochs_to_threshold, vec![Some(2), Some(3), None]);
        assert_eq!(s[0].final_test_accuracy, 0.96);
        assert!(compare_curves(&[curve("e", &[])]).is_err());
        assert!(compare_curves(&[]).is_err());
    }

    #[test]
    fn non_monotone_epochs_rejected() {
        let mut c = curve("a", &[0.5]);
        let r = c.records[0].clone();
        assert!(c.push(r).is_err());
    }
}
