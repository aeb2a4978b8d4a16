//! Hand-crafted feature catalog for the MLP baseline.
//!
//! For each of eight nested centered sub-windows (widths 5 to 721) ten
//! statistics are computed, giving 80 values ordered scale-major:
//!
//! | # | feature |
//! |---|---------|
//! | 0 | mean |
//! | 1 | population standard deviation |
//! | 2 | minimum |
//! | 3 | maximum |
//! | 4 | median |
//! | 5 | fraction of values strictly below the median of the full window |
//! | 6 | zero-crossing rate of the mean-centered signal, per adjacent pair |
//! | 7 | mean absolute first difference |
//! | 8 | 90th percentile, nearest rank (`sorted[ceil(0.9 w) - 1]`) |
//! | 9 | energy, mean of squares |

use crate::error::{Error, Result};
use crate::types::{WindowSample, WINDOW_LEN};

pub const FEATURE_CATALOG_VERSION: u32 = 1;
pub const SCALES: [usize; 8] = [5, 11, 21, 41, 81, 161, 321, 721];
pub const FEATURES_PER_SCALE: usize = 10;
pub const NUM_FEATURES: usize = SCALES.len() * FEATURES_PER_SCALE;

pub const FEATURE_NAMES: [&str; FEATURES_PER_SCALE] = [
    "mean",
    "std",
    "min",
    "max",
    "median",
    "frac_below_median",
    "zero_crossing_rate",
    "mean_abs_diff",
    "p90",
    "energy",
];

/// Mean taken as the first value plus the mean deviation from it, so
/// constant inputs come back exactly.
pub fn stable_mean(xs: &[f64]) -> f64 {
    let base = xs[0];
    base + xs.iter().map(|x| x - base).sum::<f64>() / xs.len() as f64
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn median_of_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn engineer_features(window: &WindowSample) -> Result<Vec<f64>> {
    features_from_values(&window.values)
}

pub fn features_from_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != WINDOW_LEN {
        return Err(Error::LengthMismatch(format!(
            "feature extraction needs a {WINDOW_LEN}-value window, got {}",
            values.len()
        )));
    }
    let center = WINDOW_LEN / 2;
    let global_median = median_of_sorted(&sorted(values));
    let mut out = Vec::with_capacity(NUM_FEATURES);
    for w in SCALES {
        let h = w / 2;
        let x = &values[center - h..=center + h];
        let n = x.len() as f64;
        let s = sorted(x);
        let mean = stable_mean(x);
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let below = x.iter().filter(|&&v| v < global_median).count() as f64 / n;
        let crossings = x
            .windows(2)
            .filter(|p| (p[0] - mean) * (p[1] - mean) < 0.0)
            .count() as f64
            / (n - 1.0);
        let mad = x.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (n - 1.0);
        let p90 = s[(0.9 * n).ceil() as usize - 1];
        let energy = x.iter().map(|v| v * v).sum::<f64>() / n;
        out.extend_from_slice(&[
            mean,
            var.sqrt(),
            s[0],
            s[s.len() - 1],
            median_of_sorted(&s),
            below,
            crossings,
            mad,
            p90,
            energy,
        ]);
    }
    Ok(out)
}
