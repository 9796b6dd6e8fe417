use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{Context, Result};
use reportgen_core::clustering::{adjusted_rand_index, agglomerative, dbscan, kmeans, silhouette_score, Linkage, NOISE};
use reportgen_core::corpus::{generate_synthetic_corpus, preprocess_record, DefaultSegmenter, Vocabulary};
use reportgen_core::embedding::tfidf_embed;
use reportgen_core::matrix::Matrix;
use reportgen_core::reduction::{knn, umap_reduce};
use reportgen_core::rng::derive_seed;

use super::ensure_dir;
use crate::artifacts::{Workspace, BENCH};
use crate::config::PipelineConfig;
use crate::UsageError;

struct Row {
    method: &'static str,
    n: usize,
    clusters: usize,
    silhouette: Option<f64>,
    ari: f64,
    seconds: f64,
}

/// DBSCAN radius: the 90th percentile of every point's distance to its
/// `min_pts`-th neighbour.
fn dbscan_eps(points: &Matrix, min_pts: usize) -> Result<f64> {
    let nn = knn(points, min_pts)?;
    let mut d: Vec<f64> = nn.iter().map(|row| row.last().map_or(0.0, |&(_, d)| d)).collect();
    d.sort_by(f64::total_cmp);
    Ok(d[(d.len() * 9 / 10).min(d.len() - 1)])
}

/// Silhouette over the points a method actually assigned.
fn silhouette_of(points: &Matrix, labels: &[i64]) -> Option<f64> {
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    let rows: Vec<Vec<f32>> = keep.iter().map(|&i| points.row(i).to_vec()).collect();
    let sub = Matrix::from_rows(&rows).ok()?;
    let assign: Vec<usize> = keep.iter().map(|&i| labels[i] as usize).collect();
    silhouette_score(&sub, &assign).ok()
}

fn distinct(labels: &[i64]) -> usize {
    let mut l: Vec<i64> = labels.iter().copied().filter(|&l| l != NOISE).collect();
    l.sort_unstable();
    l.dedup();
    l.len()
}

fn bench_size(config: &PipelineConfig, n: usize) -> Result<Vec<Row>> {
    let b = &config.bench;
    let seed = derive_seed(config.seed, &format!("bench-{n}"));
    let corpus = generate_synthetic_corpus(b.templates, n, seed)?;
    let reports = corpus
        .records
        .iter()
        .map(|r| preprocess_record(r, &DefaultSegmenter))
        .collect::<reportgen_core::Result<Vec<_>>>()?;
    let vocab = Vocabulary::build(&reports);
    let embedded = tfidf_embed(&reports, &vocab)?;
    let mut layout = config.distill.grid.layout;
    layout.target_dim = b.dim;
    layout.seed = seed;
    let points = umap_reduce(&embedded.matrix, &layout)?.matrix;
    let truth = &corpus.labels;

    let mut rows = Vec::new();
    let mut record = |method, labels: Vec<i64>, started: Instant| -> Result<()> {
        let seconds = started.elapsed().as_secs_f64();
        // Noise points form one extra group for the ARI.
        let as_usize: Vec<usize> = labels.iter().map(|&l| if l == NOISE { usize::MAX } else { l as usize }).collect();
        rows.push(Row {
            method,
            n,
            clusters: distinct(&labels),
            silhouette: silhouette_of(&points, &labels),
            ari: adjusted_rand_index(&as_usize, truth)?,
            seconds,
        });
        Ok(())
    };

    let t = Instant::now();
    let km = kmeans(&points, b.templates, derive_seed(seed, "kmeans"), 10)?;
    record("kmeans", km.assignments.iter().map(|&a| a as i64).collect(), t)?;

    let t = Instant::now();
    let eps = dbscan_eps(&points, b.min_pts)?;
    record("dbscan", dbscan(&points, eps, b.min_pts)?, t)?;

    let t = Instant::now();
    let ag = agglomerative(&points, b.templates, Linkage::Average)?;
    record("agglomerative", ag.iter().map(|&a| a as i64).collect(), t)?;
    Ok(rows)
}

pub fn bench_cluster(config: &PipelineConfig) -> Result<()> {
    let b = &config.bench;
    if b.sizes.is_empty() {
        return Err(UsageError("bench.sizes is empty".into()).into());
    }
    let mut csv = String::from("method,n,clusters,silhouette,ari,seconds\n");
    for &n in &b.sizes {
        for r in bench_size(config, n).with_context(|| format!("benchmark at n = {n}"))? {
            let sil = r.silhouette.map_or_else(String::new, |s| format!("{s:.6}"));
            writeln!(csv, "{},{},{},{sil},{:.6},{:.6}", r.method, r.n, r.clusters, r.ari, r.seconds).unwrap();
            eprintln!(
                "{:<14} n={:<5} clusters={:<3} silhouette={:<9} ari={:.4}  {:.3}s",
                r.method, r.n, r.clusters, sil, r.ari, r.seconds
            );
        }
    }
    ensure_dir(&config.output)?;
    let ws = Workspace::new(config);
    std::fs::write(ws.path(BENCH), csv)?;
    Ok(())
}
