use serde::{Deserialize, Serialize};

use crate::cluster::dtw::{dtw_distance, encode_day, DayEncoding};
use crate::error::{Error, Result};
use crate::types::DayVector;

/// Identity of one clustered day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafInfo {
    pub patient_id: String,
    pub day_index: usize,
    pub has_attack: bool,
}

impl LeafInfo {
    pub fn name(&self) -> String {
        format!("{}_day{}", self.patient_id, self.day_index)
    }
}

/// Symmetric non-negative distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    leaves: Vec<LeafInfo>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(leaves: Vec<LeafInfo>, values: Vec<f64>) -> Result<Self> {
        let n = leaves.len();
        if values.len() != n * n {
            return Err(Error::LengthMismatch(format!(
                "{} distances for {n} leaves",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Invalid(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let d = values[i * n + j];
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::Invalid(format!("distance ({i}, {j}) = {d}")));
                }
                if d != values[j * n + i] {
                    return Err(Error::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { leaves, values })
    }

    /// Matrix from rows with generated leaf names `L0`, `L1`, ...
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let leaves = (0..rows.len())
            .map(|i| LeafInfo {
                patient_id: format!("L{i}"),
                day_index: 0,
                has_attack: false,
            })
            .collect();
        Self::new(leaves, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn leaves(&self) -> &[LeafInfo] {
        &self.leaves
    }
}

/// DTW between every pair of encoded days, each pair computed once.
pub fn pairwise_dtw(days: &[DayVector], encoding: &DayEncoding) -> Result<DistanceMatrix> {
    if days.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 days, got {}", days.len())));
    }
    let n0 = days[0].states.len();
    if let Some(d) = days.iter().find(|d| d.states.len() != n0 || d.activity.len() != n0) {
        return Err(Error::LengthMismatch(format!(
            "day {} of {} has {} epochs, expected {n0}",
            d.day_index,
            d.patient_id,
            d.states.len()
        )));
    }
    let encoded = days
        .iter()
        .map(|d| encode_day(d, encoding))
        .collect::<Result<Vec<_>>>()?;
    let n = days.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dtw_distance(&encoded[i], &encoded[j])?;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    let leaves = days
        .iter()
        .map(|d| LeafInfo {
            patient_id: d.patient_id.clone(),
            day_index: d.day_index,
            has_attack: d.has_attack,
        })
        .collect();
    DistanceMatrix::new(leaves, values)
}
