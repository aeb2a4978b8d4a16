use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SleepState, WindowSample};

/// Targets for the two heads of the multi-task network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlTarget {
    /// S/T: share of Sleep or Siesta epochs in the window.
    pub sleep_fraction: f64,
    pub awake_fraction: f64,
    pub center_one_hot: [f64; 4],
}

impl MtlTarget {
    /// Auxiliary head distribution, `(S/T, 1 - S/T)`.
    pub fn aux(&self) -> [f64; 2] {
        [self.sleep_fraction, self.awake_fraction]
    }
}

pub fn one_hot(state: SleepState) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[state.index()] = 1.0;
    v
}

/// `(S/T, 1 - S/T)` from a count of asleep epochs out of `total`.
pub fn sleep_distribution(asleep: usize, total: usize) -> [f64; 2] {
    let s = asleep as f64 / total as f64;
    [s, 1.0 - s]
}

pub fn make_mtl_targets(sample: &WindowSample) -> Result<MtlTarget> {
    let missing = || Error::Unlabeled(sample.patient_id.clone());
    let labels = sample.window_labels.as_ref().ok_or_else(missing)?;
    let center = sample.center_label.ok_or_else(missing)?;
    if labels.is_empty() {
        return Err(missing());
    }
    let asleep = labels.iter().filter(|s| s.is_asleep()).count();
    let [sleep_fraction, awake_fraction] = sleep_distribution(asleep, labels.len());
    Ok(MtlTarget {
        sleep_fraction,
        awake_fraction,
        center_one_hot: one_hot(center),
    })
}
