use rayon::prelude::*;

use crate::matrix::{distance, Matrix};
use crate::{Error, Result};

/// Mean silhouette coefficient. Points in singleton clusters score 0, as
/// do points with `a = b = 0`.
pub fn silhouette_score(points: &Matrix, assignments: &[usize]) -> Result<f64> {
    let n = points.rows();
    if assignments.len() != n {
        return Err(Error::config(format!("{} labels for {n} points", assignments.len())));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&c| sizes[c] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::config("silhouette needs at least two non-empty clusters"));
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sum = vec![0.0f64; k];
            for j in 0..n {
                if j != i {
                    sum[assignments[j]] += distance(points.row(i), points.row(j));
                }
            }
            let a = sum[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sum[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let mut table = std::collections::BTreeMap::<(usize, usize), u64>::new();
    let mut ra = std::collections::BTreeMap::<usize, u64>::new();
    let mut rb = std::collections::BTreeMap::<usize, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n).max(1.0);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < f64::EPSILON {
        // both partitions trivial (all-one-cluster or all-singletons)
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
