use serde::{Deserialize, Serialize};

use crate::cluster::matrix::{DistanceMatrix, LeafInfo};
use crate::error::{Error, Result};

/// One agglomeration step. Node ids below the leaf count are leaves; merge
/// `k` creates node `leaves + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<LeafInfo>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> usize {
        self.leaves.len() + self.merges.len() - 1
    }

    pub fn height(&self, node: usize) -> f64 {
        let n = self.leaves.len();
        if node < n {
            0.0
        } else {
            self.merges[node - n].height
        }
    }

    /// Merge heights never decrease along the merge sequence.
    pub fn is_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[0].height <= w[1].height)
    }
}

/// UPGMA agglomerative clustering.
///
/// Each cluster is identified by its lowest leaf index. The closest pair is
/// merged; among equal distances the lexicographically lowest pair of
/// identifiers wins. Cluster distances are kept as sums of cross-pair leaf
/// distances, so `d(A∪B, C) = (|A| d(A,C) + |B| d(B,C)) / (|A| + |B|)` is
/// evaluated with a single rounding and is exact for integer inputs.
/// Nearest-neighbor candidates are cached per row, so a typical run costs
/// `O(n^2)`.
pub fn upgma(matrix: &DistanceMatrix) -> Result<Dendrogram> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::Invalid(format!("clustering needs at least 2 leaves, got {n}")));
    }
    let mut d: Vec<f64> = (0..n * n).map(|k| matrix.get(k / n, k % n)).collect();
    let mut sums = d.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    // Best partner j > i for each row, lowest j on ties.
    let mut nn: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];

    let scan = |d: &[f64], active: &[bool], i: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in i + 1..n {
            if active[j] && d[i * n + j] < best.0 {
                best = (d[i * n + j], j);
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = scan(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut pick = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if active[i] && nn[i].1 != usize::MAX && nn[i].0 < pick.0 {
                pick = (nn[i].0, i, nn[i].1);
            }
        }
        let (height, i, j) = pick;
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height,
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        for k in 0..n {
            if active[k] && k != i {
                let total = sums[i * n + k] + sums[j * n + k];
                sums[i * n + k] = total;
                sums[k * n + i] = total;
                // Never below the merge height; only rounding of non-integer
                // sums can trigger the clamp.
                let v = (total / (size[i] * size[k]) as f64).max(height);
                d[i * n + k] = v;
                d[k * n + i] = v;
            }
        }
        node[i] = n + step;

        nn[i] = scan(&d, &active, i);
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            if nn[k].1 == i || nn[k].1 == j {
                nn[k] = scan(&d, &active, k);
            } else if k < i {
                let v = d[k * n + i];
                if v < nn[k].0 || (v == nn[k].0 && i < nn[k].1) {
                    nn[k] = (v, i);
                }
            }
        }
    }
    Ok(Dendrogram {
        leaves: matrix.leaves().to_vec(),
        merges,
    })
}

/// Flat clustering into `k` groups by undoing the `k - 1` highest merges.
/// Among merges of equal height the later one is undone first. Cluster ids
/// are numbered by first appearance in leaf order.
pub fn cut_tree(tree: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = tree.num_leaves();
    if k < 1 || k > n {
        return Err(Error::Invalid(format!("cluster count {k} outside 1..={n}")));
    }
    if tree.merges.len() + 1 != n {
        return Err(Error::Invalid("dendrogram is not a single binary tree".into()));
    }
    let mut order: Vec<usize> = (0..tree.merges.len()).collect();
    order.sort_by(|&a, &b| tree.merges[a].height.total_cmp(&tree.merges[b].height).then(a.cmp(&b)));
    let kept = &order[..order.len() - (k - 1)];

    let mut parent: Vec<usize> = (0..n + tree.merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &m in kept {
        let id = n + m;
        let Merge { left, right, .. } = tree.merges[m];
        for child in [left, right] {
            let r = find(&mut parent, child);
            let target = find(&mut parent, id);
            if r != target {
                parent[r] = target;
            }
        }
    }
    let mut labels = std::collections::HashMap::new();
    Ok((0..n)
        .map(|leaf| {
            let r = find(&mut parent, leaf);
            let next = labels.len();
            *labels.entry(r).or_insert(next)
        })
        .collect())
}
