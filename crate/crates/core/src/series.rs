//! Smoothing, windowing, label-grammar validation, train/test splitting and
//! day partitioning.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{DayVector, DaytimeConfig, LabeledSeries, SleepState, WindowSample, EPOCHS_PER_DAY};

pub const DEFAULT_SMOOTH_HALF_WIDTH: usize = 2;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Centered moving average with edge-truncated windows.
pub fn smooth_values(values: &[f64], half_width: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width).min(n - 1);
            let slice = &values[lo..=hi];
            // Averaging deviations from the first value keeps constant
            // signals bit-exact.
            let base = slice[0];
            let dev: f64 = slice.iter().map(|v| v - base).sum();
            base + dev / slice.len() as f64
        })
        .collect()
}

pub fn smooth_series(series: &LabeledSeries, half_width: usize) -> Result<LabeledSeries> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    series.with_activity(smooth_values(&series.activity(), half_width))
}

/// Number of window centers for a series of `len` epochs.
pub fn window_count(len: usize, context: usize, stride: usize) -> usize {
    let span = 2 * context;
    if len <= span {
        0
    } else {
        (len - span).div_ceil(stride)
    }
}

pub fn extract_windows(series: &LabeledSeries, context: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if stride == 0 {
        return Err(Error::Invalid("window stride must be at least 1".into()));
    }
    let required = 2 * context + 1;
    if series.len() < required {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            required,
        });
    }
    let activity = series.activity();
    let states = series.is_labeled().then(|| series.states()).transpose()?;
    Ok((context..series.len() - context)
        .step_by(stride)
        .map(|c| {
            let range = c - context..=c + context;
            WindowSample {
                patient_id: series.patient_id().to_string(),
                values: activity[range.clone()].to_vec(),
                center_index: c,
                center_label: states.as_ref().map(|s| s[c]),
                window_labels: states.as_ref().map(|s| s[range].to_vec()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    FallingAsleepNotAfterWake,
    FallingAsleepNotBeforeSleep,
    SiestaNotAfterWake,
    SiestaNotBeforeWake,
    SiestaOutsideDaytime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Epoch index. Run-boundary violations point at the first or last epoch
    /// of the offending run; daytime violations at the first epoch of each
    /// out-of-hours stretch.
    pub position: usize,
    pub kind: ViolationKind,
}

/// Maximal runs of equal states as `(state, start, end_inclusive)`.
pub fn runs(states: &[SleepState]) -> Vec<(SleepState, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=states.len() {
        if i == states.len() || states[i] != states[start] {
            out.push((states[start], start, i - 1));
            start = i;
        }
    }
    out
}

/// Checks the label grammar. A run touching either end of the series has no
/// neighbor on that side and is reported as a violation.
pub fn validate_label_grammar(series: &LabeledSeries, cfg: &DaytimeConfig) -> Result<Vec<Violation>> {
    let states = series.states()?;
    let runs = runs(&states);
    let mut out = Vec::new();
    for (r, &(state, start, end)) in runs.iter().enumerate() {
        let before = r.checked_sub(1).map(|p| runs[p].0);
        let after = runs.get(r + 1).map(|n| n.0);
        match state {
            SleepState::FallingAsleep => {
                if before != Some(SleepState::Wake) {
                    out.push(Violation {
                        position: start,
                        kind: ViolationKind::FallingAsleepNotAfterWake,
                    });
                }
                if after != Some(SleepState::Sleep) {
                    out.push(Violation {
                        position: end,
                        kind: ViolationKind::FallingAsleepNotBeforeSleep,
                    });
                }
            }
            SleepState::Siesta => {
                if before != Some(SleepState::Wake) {
                    out.push(Violation {
                        position: start,
                        kind: ViolationKind::SiestaNotAfterWake,
                    });
                }
                if after != Some(SleepState::Wake) {
                    out.push(Violation {
                        position: end,
                        kind: ViolationKind::SiestaNotBeforeWake,
                    });
                }
                let mut inside = true;
                for i in start..=end {
                    let ok = cfg.contains(series.clock_at(i));
                    if !ok && inside {
                        out.push(Violation {
                            position: i,
                            kind: ViolationKind::SiestaOutsideDaytime,
                        });
                    }
                    inside = ok;
                }
            }
            _ => {}
        }
    }
    out.sort_by_key(|v| v.position);
    Ok(out)
}

/// Splits items into train and test sets per group.
///
/// Within each group (in input order) `round(n * fraction)` items go to
/// train. The remaining items form one contiguous test block whose offset is
/// drawn from a ChaCha8 stream seeded with `seed`. Groups are visited in
/// order of first appearance; outputs keep input order.
pub fn split_by_group<T, K, F>(items: Vec<T>, train_fraction: f64, seed: u64, key: F) -> Result<(Vec<T>, Vec<T>)>
where
    K: Eq + Hash + Clone,
    F: Fn(&T) -> K,
{
    if items.is_empty() {
        return Err(Error::Invalid("cannot split an empty sample list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut order: Vec<K> = Vec::new();
    let mut members: HashMap<K, Vec<usize>> = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        let k = key(item);
        match members.get_mut(&k) {
            Some(v) => v.push(i),
            None => {
                order.push(k.clone());
                members.insert(k, vec![i]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; items.len()];
    for k in &order {
        let idx = &members[k];
        let n = idx.len();
        let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
        let n_test = n - n_train;
        let offset = rng.random_range(0..=n_train);
        for &i in &idx[offset..offset + n_test] {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (item, t) in items.into_iter().zip(is_test) {
        if t {
            test.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, test))
}

pub fn split_train_test(
    samples: Vec<WindowSample>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    split_by_group(samples, train_fraction, seed, |s| s.patient_id.clone())
}

pub fn partition_days(series: &LabeledSeries) -> Result<Vec<DayVector>> {
    let states = series.states()?;
    let attacks = series.attacks();
    let activity = series.activity();
    Ok((0..series.len() / EPOCHS_PER_DAY)
        .map(|d| {
            let r = d * EPOCHS_PER_DAY..(d + 1) * EPOCHS_PER_DAY;
            DayVector {
                patient_id: series.patient_id().to_string(),
                day_index: d,
                states: states[r.clone()].iter().map(|s| s.code()).collect(),
                activity: activity[r.clone()].to_vec(),
                has_attack: attacks[r].iter().any(|&a| a),
            }
        })
        .collect())
}
