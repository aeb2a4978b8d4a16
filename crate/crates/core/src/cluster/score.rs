use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub purity: f64,
    pub adjusted_rand_index: f64,
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Purity and adjusted Rand index of a clustering against reference labels.
///
/// The adjusted Rand index is reported as 1.0 when its denominator
/// vanishes, which happens only when both partitions are trivial in the
/// same way.
pub fn separation_score<L: Eq + Hash + Clone>(assignment: &[usize], labels: &[L]) -> Result<Separation> {
    if assignment.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} assignments for {} labels",
            assignment.len(),
            labels.len()
        )));
    }
    if assignment.is_empty() {
        return Err(Error::Invalid("no leaves to score".into()));
    }
    let n = assignment.len() as u64;
    let mut table: HashMap<(usize, L), u64> = HashMap::new();
    let mut clusters: HashMap<usize, u64> = HashMap::new();
    let mut classes: HashMap<L, u64> = HashMap::new();
    for (&c, l) in assignment.iter().zip(labels) {
        *table.entry((c, l.clone())).or_default() += 1;
        *clusters.entry(c).or_default() += 1;
        *classes.entry(l.clone()).or_default() += 1;
    }
    let mut best: HashMap<usize, u64> = HashMap::new();
    for ((c, _), &v) in &table {
        let b = best.entry(*c).or_default();
        *b = (*b).max(v);
    }
    let purity = best.values().sum::<u64>() as f64 / n as f64;

    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let a: f64 = clusters.values().map(|&v| pairs(v)).sum();
    let b: f64 = classes.values().map(|&v| pairs(v)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { a * b / total } else { 0.0 };
    let max = 0.5 * (a + b);
    let ari = if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    };
    Ok(Separation {
        purity,
        adjusted_rand_index: ari,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_trivial() {
        let s = separation_score(&[0, 0, 1, 1], &[true, true, false, false]).unwrap();
        assert_eq!((s.purity, s.adjusted_rand_index), (1.0, 1.0));
        let s = separation_score(&[0, 0, 0, 0], &[true, true, false, false]).unwrap();
        assert_eq!(s.purity, 0.5);
        assert_eq!(s.adjusted_rand_index, 0.0);
        assert!(separation_score(&[0], &[true, false]).is_err());
    }

    #[test]
    fn known_ari() {
        // Contingency [[2,1],[0,3]]: (4 - 2.8) / (6.5 - 2.8) = 12/37.
        let s = separation_score(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 1, 1]).unwrap();
        assert!((s.adjusted_rand_index - 12.0 / 37.0).abs() < 1e-12);
    }
}
