use rand::Rng;

use super::{canonical_labels, silhouette_score};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const MAX_ITER: usize = 300;
const SHIFT_TOL: f64 = 1e-6;

/// Output of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Labels in `[0, k)`, numbered by first appearance.
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares, accumulated in f64.
    pub wcss: f64,
    /// `None` when `k == 1`.
    pub silhouette: Option<f64>,
    /// wcss after every Lloyd iteration of the winning restart.
    pub wcss_trace: Vec<f64>,
}

fn sq(a: &[f32], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

fn nearest(row: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq(row, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let to_f64 = |i: usize| points.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut centroids = vec![to_f64(rng.gen_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = to_f64(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    assign: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    wcss: f64,
    trace: Vec<f64>,
}

fn lloyd(points: &Matrix, k: usize, rng: &mut impl Rng) -> Run {
    let (n, d) = (points.rows(), points.cols());
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITER {
        let mut next: Vec<usize> = Vec::with_capacity(n);
        let mut dist: Vec<f64> = Vec::with_capacity(n);
        for row in points.iter_rows() {
            let (c, dd) = nearest(row, &centroids);
            next.push(c);
            dist.push(dd);
        }
        // repair empty clusters with the point farthest from its centroid
        let mut sizes = vec![0usize; k];
        next.iter().for_each(|&c| sizes[c] += 1);
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a donor cluster");
            sizes[next[far]] -= 1;
            sizes[c] = 1;
            next[far] = c;
            dist[far] = 0.0;
            centroids[c] = points.row(far).iter().map(|&v| v as f64).collect();
        }
        let unchanged = next == assign;
        assign = next;

        let mut sums = vec![vec![0.0f64; d]; k];
        for (i, row) in points.iter_rows().enumerate() {
            for (s, &v) in sums[assign[i]].iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            shift = shift.max(mean.iter().zip(&centroids[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
            centroids[c] = mean;
        }
        let wcss: f64 = points.iter_rows().zip(&assign).map(|(r, &c)| sq(r, &centroids[c])).sum();
        trace.push(wcss);
        if unchanged || shift < SHIFT_TOL {
            break;
        }
    }
    let wcss = *trace.last().unwrap_or(&0.0);
    Run { assign, centroids, wcss, trace }
}

/// k-means++ seeding and Lloyd iterations, best of `restarts` by wcss.
/// Restart `r` draws from a seed derived from `(seed, r)`.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} must be in [1, {n}]")));
    }
    if restarts == 0 {
        return Err(Error::config("restarts must be at least 1"));
    }
    let mut best: Option<Run> = None;
    for r in 0..restarts {
        let mut rng = seeded(derive_seed(seed, &format!("kmeans-restart-{r}")));
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    // relabel by first appearance and reorder centroids to match
    let assignments = canonical_labels(&run.assign);
    let mut order = vec![0usize; k];
    for (&old, &new) in run.assign.iter().zip(&assignments) {
        order[new] = old;
    }
    let data: Vec<f32> = order.iter().flat_map(|&c| run.centroids[c].iter().map(|&v| v as f32)).collect();
    let centroids = Matrix::new(k, points.cols(), data)?;
    let silhouette = if k >= 2 { Some(silhouette_score(points, &assignments)?) } else { None };
    Ok(ClusterResult { assignments, centroids, wcss: run.wcss, silhouette, wcss_trace: run.trace })
}
