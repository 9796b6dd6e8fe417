use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::canonical_labels;
use crate::matrix::{distance, Matrix};
use crate::{Error, Result};

/// DBSCAN label for points in no cluster.
pub const NOISE: i64 = -1;

/// DBSCAN. A point is core if at least `min_pts` points (itself included)
/// lie within `eps`. Clusters are numbered in order of discovery.
pub fn dbscan(points: &Matrix, eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    if !(eps.is_finite() && eps > 0.0) || min_pts == 0 {
        return Err(Error::config(format!("dbscan needs eps > 0 and min_pts >= 1, got {eps}, {min_pts}")));
    }
    let n = points.rows();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| distance(points.row(i), points.row(j)) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    for start in 0..n {
        if labels[start] != NOISE || !core[start] {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

/// Bottom-up hierarchical clustering until `k` clusters remain, using the
/// Lance–Williams update for the chosen linkage. Ties merge the
/// lowest-indexed pair.
pub fn agglomerative(points: &Matrix, k: usize, linkage: Linkage) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::config(format!("agglomerative k = {k} must be in [1, {n}]")));
    }
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(points.row(i), points.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if d[i * n + j] < best.2 {
                    best = (i, j, d[i * n + j]);
                }
            }
        }
        let (a, b, _) = best;
        for c in (0..n).filter(|&c| alive[c] && c != a && c != b) {
            let (da, db) = (d[a * n + c], d[b * n + c]);
            let v = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64,
            };
            d[a * n + c] = v;
            d[c * n + a] = v;
        }
        size[a] += size[b];
        alive[b] = false;
        owner.iter_mut().filter(|o| **o == b).for_each(|o| *o = a);
    }
    Ok(canonical_labels(&owner))
}
