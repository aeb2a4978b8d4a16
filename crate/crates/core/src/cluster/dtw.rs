use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DayVector;

/// Dynamic time warping with local cost `|a_i - b_j|` and the symmetric
/// unit-weight step set {down, right, diagonal}, without a window
/// constraint. Runs in `O(|a| |b|)` time and `O(|b|)` memory.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("dynamic time warping needs non-empty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (ai - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// State codes Wake=0 .. Sleep=3.
    #[default]
    Ordinal,
    /// 1 for Sleep or Siesta, 0 otherwise.
    Binary,
    /// Raw activity values.
    Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DayEncoding {
    pub mode: EncodingMode,
    /// Consecutive epochs merged into one point before warping. States are
    /// merged by majority vote (ties to the lowest code), activity by mean.
    pub downsample: usize,
}

impl Default for DayEncoding {
    fn default() -> Self {
        Self {
            mode: EncodingMode::Ordinal,
            downsample: 10,
        }
    }
}

fn majority(codes: &[u8]) -> u8 {
    let mut counts = [0usize; 4];
    for &c in codes {
        counts[c as usize] += 1;
    }
    let mut best = 0;
    for k in 1..4 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best as u8
}

pub fn encode_day(day: &DayVector, encoding: &DayEncoding) -> Result<Vec<f64>> {
    if encoding.downsample == 0 {
        return Err(Error::Config("downsample factor must be at least 1".into()));
    }
    let f = encoding.downsample;
    Ok(match encoding.mode {
        EncodingMode::Activity => day
            .activity
            .chunks(f)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect(),
        EncodingMode::Ordinal | EncodingMode::Binary => day
            .states
            .chunks(f)
            .map(|c| {
                let code = majority(c);
                if encoding.mode == EncodingMode::Binary {
                    f64::from(u8::from(code >= 2))
                } else {
                    f64::from(code)
                }
            })
            .collect(),
    })
}
