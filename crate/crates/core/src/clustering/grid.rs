use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, silhouette_score};
use crate::embedding::{EmbedMethod, EmbeddingMatrix};
use crate::matrix::Matrix;
use crate::reduction::{umap_reduce, LayoutConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Coarse bounds on the number of topics, with the curves they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub lower: usize,
    pub upper: usize,
    /// `(k, silhouette)` for every candidate k.
    pub silhouette_curve: Vec<(usize, f64)>,
    /// `(k, wcss)` for every candidate k.
    pub wcss_curve: Vec<(usize, f64)>,
}

/// Settings of the two-step search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    pub n_k: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub layout: LayoutConfig,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 5, 10, 50],
            n_k: 4,
            k_min: 2,
            k_max: 20,
            restarts: 10,
            layout: LayoutConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSelection {
    pub embed_method: EmbedMethod,
    pub dim: usize,
    pub k: usize,
    pub silhouette: f64,
}

/// Silhouette per `(k, dim)` cell for one embedding method. `None` marks a
/// cell that could not be evaluated (dim not below the embedding width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub method: EmbedMethod,
    pub range: RangeEstimate,
    pub ks: Vec<usize>,
    pub dims: Vec<usize>,
    /// `scores[row][col]` for `ks[row]`, `dims[col]`.
    pub scores: Vec<Vec<Option<f64>>>,
}

/// Topic per report id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTopics {
    pub k: usize,
    pub topics: BTreeMap<String, usize>,
}

/// Full output of [`grid_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distillation {
    pub selection: GridSelection,
    pub topics: KnowledgeTopics,
    pub grids: Vec<HeatmapGrid>,
}

/// Silhouette argmax for the lower bound and the chord-distance elbow of
/// the wcss curve for the upper bound, both over `[k_min, k_max]` on the
/// given (unreduced) points.
pub fn coarse_range(points: &Matrix, config: &GridConfig, seed: u64) -> Result<RangeEstimate> {
    let (k_min, k_max) = (config.k_min, config.k_max);
    if k_min < 2 || k_max <= k_min {
        return Err(Error::config(format!("k range [{k_min}, {k_max}] needs 2 <= k_min < k_max")));
    }
    if points.rows() <= k_max {
        return Err(Error::DatasetTooSmall { needed: k_max + 1, got: points.rows() });
    }
    let runs: Vec<(usize, f64, f64)> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let r = kmeans(points, k, derive_seed(seed, &format!("coarse/{k}")), config.restarts)?;
            Ok((k, r.silhouette.unwrap_or(0.0), r.wcss))
        })
        .collect::<Result<_>>()?;
    let mut lower = k_min;
    let mut best = f64::NEG_INFINITY;
    for &(k, s, _) in &runs {
        if s > best {
            (lower, best) = (k, s);
        }
    }
    let upper = elbow(&runs.iter().map(|&(k, _, w)| (k, w)).collect::<Vec<_>>());
    let (lower, upper) = if lower > upper { (upper, lower) } else { (lower, upper) };
    Ok(RangeEstimate {
        lower,
        upper,
        silhouette_curve: runs.iter().map(|&(k, s, _)| (k, s)).collect(),
        wcss_curve: runs.iter().map(|&(k, _, w)| (k, w)).collect(),
    })
}

/// Point of the curve farthest from the chord joining its endpoints, with
/// both axes rescaled to [0, 1]. Ties go to the smaller k.
fn elbow(curve: &[(usize, f64)]) -> usize {
    let (k0, k1) = (curve[0].0 as f64, curve[curve.len() - 1].0 as f64);
    let (wmin, wmax) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, w)| (a.min(w), b.max(w)));
    if wmax - wmin <= 0.0 {
        return curve[0].0;
    }
    let norm = |&(k, w): &(usize, f64)| ((k as f64 - k0) / (k1 - k0), (w - wmin) / (wmax - wmin));
    let (x0, y0) = norm(&curve[0]);
    let (x1, y1) = norm(&curve[curve.len() - 1]);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = (curve[0].0, f64::NEG_INFINITY);
    for p in curve {
        let (x, y) = norm(p);
        let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len;
        if d > best.1 {
            best = (p.0, d);
        }
    }
    best.0
}

/// `n` integers spread evenly over `[lower, upper]` (inclusive, rounded).
/// Collisions are replaced by the nearest unused integers outside the
/// range, staying within `[k_min, k_max]`. Sorted ascending.
pub fn sample_ks(lower: usize, upper: usize, n: usize, k_min: usize, k_max: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = if n <= 1 {
        vec![lower]
    } else {
        (0..n)
            .map(|i| (lower as f64 + i as f64 * (upper - lower) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    ks.dedup();
    if ks.len() < n {
        let gap = |k: usize| if k < lower { lower - k } else { k.saturating_sub(upper) };
        let mut spare: Vec<usize> = (k_min..=k_max).filter(|k| !ks.contains(k) && (*k < lower || *k > upper)).collect();
        spare.sort_by_key(|&k| (gap(k), k));
        let need = n - ks.len();
        ks.extend(spare.into_iter().take(need));
        // still short: fill interior values
        if ks.len() < n {
            let need = n - ks.len();
            let interior: Vec<usize> = (lower..=upper).filter(|k| !ks.contains(k)).take(need).collect();
            ks.extend(interior);
        }
        ks.sort_unstable();
    }
    ks
}

/// Two-step search over embedding methods, reduced dims and topic counts.
///
/// Rows are processed in report-id order so the result does not depend on
/// input order. The UMAP layout of a `(method, dim)` pair is shared by the
/// k values of that row; every k-means run has its own derived seed.
pub fn grid_select(embeddings: &[EmbeddingMatrix], config: &GridConfig) -> Result<Distillation> {
    let first = embeddings.first().ok_or_else(|| Error::config("no embedding methods configured"))?;
    let mut order: Vec<usize> = (0..first.report_ids.len()).collect();
    order.sort_by(|&a, &b| first.report_ids[a].cmp(&first.report_ids[b]));
    let ids: Vec<String> = order.iter().map(|&i| first.report_ids[i].clone()).collect();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("duplicate report ids in embedding"));
    }

    let mut grids = Vec::new();
    let mut labels: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (mi, emb) in embeddings.iter().enumerate() {
        let mut perm: Vec<usize> = (0..emb.report_ids.len()).collect();
        perm.sort_by(|&a, &b| emb.report_ids[a].cmp(&emb.report_ids[b]));
        if perm.len() != ids.len() || perm.iter().zip(&ids).any(|(&p, id)| &emb.report_ids[p] != id) {
            return Err(Error::config(format!("{} embedding covers different reports", emb.method.tag())));
        }
        let points = emb.matrix.select_rows(&perm);
        let tag = emb.method.tag();
        let range = coarse_range(&points, config, derive_seed(config.seed, &format!("coarse/{tag}")))?;
        let ks = sample_ks(range.lower, range.upper, config.n_k, config.k_min, config.k_max);
        let n = points.rows();

        let columns: Vec<Vec<(Option<f64>, Option<Vec<usize>>)>> = config
            .dims
            .par_iter()
            .map(|&dim| {
                if dim >= points.cols() {
                    return Ok(vec![(None, None); ks.len()]);
                }
                let layout = LayoutConfig {
                    target_dim: dim,
                    n_neighbors: config.layout.n_neighbors.min(n - 1),
                    seed: derive_seed(config.seed, &format!("umap/{tag}/{dim}")),
                    ..config.layout
                };
                let reduced = umap_reduce(&points, &layout)?;
                ks.iter()
                    .map(|&k| {
                        if k > n {
                            return Ok((None, None));
                        }
                        let seed = derive_seed(config.seed, &format!("kmeans/{tag}/{dim}/{k}"));
                        let r = kmeans(&reduced.matrix, k, seed, config.restarts)?;
                        let s = silhouette_score(&reduced.matrix, &r.assignments)?;
                        Ok((Some(s), Some(r.assignments)))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        let mut scores = vec![vec![None; config.dims.len()]; ks.len()];
        for (c, col) in columns.into_iter().enumerate() {
            for (r, (s, a)) in col.into_iter().enumerate() {
                scores[r][c] = s;
                if let Some(a) = a {
                    labels.insert((mi, config.dims[c], ks[r]), a);
                }
            }
        }
        grids.push(HeatmapGrid { method: emb.method, range, ks, dims: config.dims.clone(), scores });
    }

    let best = select_best(&grids);
    let (mi, selection) = best.ok_or_else(|| Error::config("no grid cell could be evaluated"))?;
    let assign = &labels[&(mi, selection.dim, selection.k)];
    let topics = KnowledgeTopics {
        k: selection.k,
        topics: ids.iter().cloned().zip(assign.iter().copied()).collect(),
    };
    Ok(Distillation { selection, topics, grids })
}

/// Argmax of `(silhouette, dim, k)` over all evaluated cells: higher
/// score wins, then the higher dim, then the higher k. Exact ties across
/// methods go to the earlier grid. Returns the grid index and the cell.
pub fn select_best(grids: &[HeatmapGrid]) -> Option<(usize, GridSelection)> {
    let mut best: Option<(usize, GridSelection)> = None;
    for (mi, grid) in grids.iter().enumerate() {
        for (r, &k) in grid.ks.iter().enumerate() {
            for (c, &dim) in grid.dims.iter().enumerate() {
                let Some(s) = grid.scores[r][c] else { continue };
                if s.is_nan() {
                    continue;
                }
                let better = best.as_ref().is_none_or(|(_, b)| {
                    (s, dim, k).partial_cmp(&(b.silhouette, b.dim, b.k)) == Some(std::cmp::Ordering::Greater)
                });
                if better {
                    best = Some((mi, GridSelection { embed_method: grid.method, dim, k, silhouette: s }));
                }
            }
        }
    }
    best
}

impl HeatmapGrid {
    /// Rows are k values, columns reduced dims.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k");
        for d in &self.dims {
            let _ = write!(out, ",dim_{d}");
        }
        out.push('\n');
        for (k, row) in self.ks.iter().zip(&self.scores) {
            let _ = write!(out, "{k}");
            for s in row {
                match s {
                    Some(v) => {
                        let _ = write!(out, ",{v:.6}");
                    }
                    None => out.push_str(",NaN"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Standalone SVG: one coloured rect per cell with its value.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 64;
        const LEFT: usize = 56;
        const TOP: usize = 40;
        let (w, h) = (LEFT + CELL * self.dims.len() + 16, TOP + CELL * self.ks.len() + 40);
        let vals: Vec<f64> = self.scores.iter().flatten().flatten().copied().collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{} silhouette</text>"#, w / 2, self.method.tag());
        for (r, (k, row)) in self.ks.iter().zip(&self.scores).enumerate() {
            let y = TOP + r * CELL;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">K={k}</text>"#, LEFT - 6, y + CELL / 2 + 4);
            for (c, v) in row.iter().enumerate() {
                let x = LEFT + c * CELL;
                let (fill, label) = match v {
                    Some(v) => {
                        let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
                        let red = (255.0 - 200.0 * t).round() as u8;
                        let green = (245.0 - 120.0 * t).round() as u8;
                        let blue = (235.0 - 40.0 * t).round() as u8;
                        (format!("rgb({red},{green},{blue})"), format!("{v:.3}"))
                    }
                    None => ("rgb(220,220,220)".to_string(), "n/a".to_string()),
                };
                let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="white"/>"#);
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + CELL / 2, y + CELL / 2 + 4);
            }
        }
        for (c, d) in self.dims.iter().enumerate() {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">dim {d}</text>"#, LEFT + c * CELL + CELL / 2, TOP + CELL * self.ks.len() + 18);
        }
        s.push_str("</svg>\n");
        s
    }
}
