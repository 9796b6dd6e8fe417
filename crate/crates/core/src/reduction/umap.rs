use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::{LayoutConfig, ReducedMatrix};
use crate::matrix::{squared_distance, Matrix};
use crate::rng::seeded;
use crate::{Error, Result};

/// `k` nearest neighbours of every point as `(index, distance)` in
/// increasing distance order (ties by index). A point is never its own
/// neighbour, even if duplicated.
pub type Neighbors = Vec<Vec<(usize, f64)>>;

/// Per-point smoothing: distance to the nearest neighbour and the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub rho: f64,
    pub sigma: f64,
}

/// Symmetric sparse membership strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub weights: BTreeMap<(usize, usize), f64>,
}

impl FuzzyGraph {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(&(i, j)).copied().unwrap_or(0.0)
    }
}

/// Exact brute-force kNN.
pub fn knn(data: &Matrix, k: usize) -> Result<Neighbors> {
    let n = data.rows();
    if k == 0 || k >= n {
        return Err(Error::config(format!("n_neighbors {k} needs more than {k} points, got {n}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, squared_distance(data.row(i), data.row(j)).sqrt()))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect())
}

fn membership_sum(row: &[(usize, f64)], rho: f64, sigma: f64) -> f64 {
    row.iter().map(|&(_, d)| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Binary-searches each point's bandwidth so its memberships sum to
/// `log2(k)`.
pub fn smooth_knn(neighbors: &Neighbors) -> Vec<Smoothing> {
    neighbors
        .par_iter()
        .map(|row| {
            let target = (row.len() as f64).log2();
            let rho = row.first().map_or(0.0, |p| p.1);
            let (mut lo, mut hi, mut sigma) = (0.0f64, f64::INFINITY, 1.0f64);
            for _ in 0..200 {
                let s = membership_sum(row, rho, sigma);
                if (s - target).abs() < 1e-9 {
                    break;
                }
                if s > target {
                    hi = sigma;
                    sigma = (lo + hi) / 2.0;
                } else {
                    lo = sigma;
                    sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
                }
            }
            Smoothing { rho, sigma: sigma.max(1e-12) }
        })
        .collect()
}

/// Directed memberships combined by the probabilistic union `a + b - ab`.
pub fn fuzzy_union(neighbors: &Neighbors, smoothing: &[Smoothing]) -> FuzzyGraph {
    let n = neighbors.len();
    let mut directed = BTreeMap::new();
    for (i, row) in neighbors.iter().enumerate() {
        let Smoothing { rho, sigma } = smoothing[i];
        for &(j, d) in row {
            directed.insert((i, j), (-(d - rho).max(0.0) / sigma).exp());
        }
    }
    let mut weights = BTreeMap::new();
    for (&(i, j), &a) in &directed {
        if weights.contains_key(&(i, j)) {
            continue;
        }
        let b = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = a + b - a * b;
        weights.insert((i, j), w);
        weights.insert((j, i), w);
    }
    FuzzyGraph { n, weights }
}

const CURVE_POINTS: usize = 300;
const CURVE_SPAN: f64 = 3.0;

fn curve_target(min_dist: f64) -> Vec<(f64, f64)> {
    (0..CURVE_POINTS)
        .map(|i| {
            let d = CURVE_SPAN * i as f64 / (CURVE_POINTS - 1) as f64;
            let y = if d <= min_dist { 1.0 } else { (-(d - min_dist)).exp() };
            (d, y)
        })
        .collect()
}

fn curve_loss(pts: &[(f64, f64)], a: f64, b: f64) -> f64 {
    pts.iter().map(|&(d, y)| (1.0 / (1.0 + a * d.powf(2.0 * b)) - y).powi(2)).sum()
}

/// Least-squares fit of `1 / (1 + a d^{2b})` to the offset-exponential
/// target on `[0, 3]`, by Levenberg–Marquardt.
pub fn fit_curve(min_dist: f32) -> Result<(f32, f32)> {
    let md = min_dist as f64;
    if !(md > 0.0 && md < 1.0) {
        return Err(Error::config(format!("min_dist must be in (0, 1), got {min_dist}")));
    }
    let pts = curve_target(md);
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut loss = curve_loss(&pts, a, b);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(d, y) in &pts {
            if d == 0.0 {
                continue;
            }
            let u = d.powf(2.0 * b);
            let den = 1.0 + a * u;
            let r = 1.0 / den - y;
            let da = -u / (den * den);
            let db = -a * u * 2.0 * d.ln() / (den * den);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..50 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let sa = -(m22 * ga - jab * gb) / det;
            let sb = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + sa, b + sb);
            let nl = if na > 0.0 && nb > 0.0 { curve_loss(&pts, na, nb) } else { f64::INFINITY };
            if nl < loss {
                let small = sa.abs() < 1e-12 * (1.0 + a) && sb.abs() < 1e-12 * (1.0 + b);
                let rel = (loss - nl) / loss.max(1e-300);
                a = na;
                b = nb;
                loss = nl;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = small || rel < 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: at a (local) minimum
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged || !a.is_finite() || !b.is_finite() {
        return Err(Error::Fit(format!("curve fit for min_dist {min_dist} did not converge")));
    }
    Ok((a as f32, b as f32))
}

fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

/// UMAP: fuzzy kNN graph then SGD on the cross-entropy layout objective.
/// The optimisation is sequential and therefore deterministic per seed.
pub fn umap_reduce(data: &Matrix, config: &LayoutConfig) -> Result<ReducedMatrix> {
    let n = data.rows();
    let dim = config.target_dim;
    if config.n_neighbors < 2 || n <= config.n_neighbors {
        return Err(Error::config(format!(
            "n_neighbors {} needs 2 <= n_neighbors < n ({n})",
            config.n_neighbors
        )));
    }
    if dim == 0 || dim >= data.cols() {
        return Err(Error::config(format!("target_dim {dim} must be in [1, {})", data.cols())));
    }
    if config.n_epochs == 0 {
        return Err(Error::config("n_epochs must be at least 1"));
    }
    let (a, b) = fit_curve(config.min_dist)?;
    let (a, b) = (a as f64, b as f64);

    let neighbors = knn(data, config.n_neighbors)?;
    let smoothing = smooth_knn(&neighbors);
    let graph = fuzzy_union(&neighbors, &smoothing);

    let n_epochs = config.n_epochs as f64;
    let max_w = graph.weights.values().copied().fold(0.0, f64::max);
    // edges too weak to be sampled even once are dropped
    let edges: Vec<(usize, usize, f64)> = graph
        .weights
        .iter()
        .filter(|(_, &w)| w >= max_w / n_epochs && w > 0.0)
        .map(|(&(i, j), &w)| (i, j, max_w / w))
        .collect();

    let mut rng = seeded(config.seed);
    let mut emb: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-10.0..10.0)).collect();

    let neg_rate = config.negative_samples as f64;
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let eps_neg: Vec<f64> = edges
        .iter()
        .map(|e| if neg_rate > 0.0 { e.2 / neg_rate } else { f64::INFINITY })
        .collect();
    let mut next_neg = eps_neg.clone();
    let mut delta = vec![0.0f64; dim];

    for epoch in 0..config.n_epochs {
        let alpha = 1.0 - epoch as f64 / n_epochs;
        let e = epoch as f64;
        for (idx, &(i, j, eps)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let d2 = dist2(&emb, i, j, dim);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for (t, dt) in delta.iter_mut().enumerate() {
                *dt = clip(coeff * (emb[i * dim + t] - emb[j * dim + t])) * alpha;
            }
            for (t, &dt) in delta.iter().enumerate() {
                emb[i * dim + t] += dt;
                emb[j * dim + t] -= dt;
            }
            next_sample[idx] += eps;

            if !eps_neg[idx].is_finite() {
                continue;
            }
            let n_neg = ((e - next_neg[idx]) / eps_neg[idx]).max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                let d2 = dist2(&emb, i, k, dim);
                for t in 0..dim {
                    let g = if d2 > 0.0 {
                        let c = 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                        clip(c * (emb[i * dim + t] - emb[k * dim + t]))
                    } else {
                        4.0
                    };
                    emb[i * dim + t] += g * alpha;
                }
            }
            next_neg[idx] += n_neg as f64 * eps_neg[idx];
        }
    }

    let matrix = Matrix::new(n, dim, emb.into_iter().map(|v| v as f32).collect())?;
    if !matrix.is_finite() {
        return Err(Error::numerics("UMAP layout diverged"));
    }
    Ok(ReducedMatrix { matrix, config: Some(*config) })
}

fn dist2(emb: &[f64], i: usize, j: usize, dim: usize) -> f64 {
    (0..dim).map(|t| (emb[i * dim + t] - emb[j * dim + t]).powi(2)).sum()
}
