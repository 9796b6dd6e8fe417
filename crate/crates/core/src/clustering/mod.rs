//! Topic clustering and the two-step (range, then grid) parameter search.

mod baselines;
mod grid;
mod kmeans;
mod score;

pub use baselines::{agglomerative, dbscan, Linkage, NOISE};
pub use grid::{
    coarse_range, grid_select, sample_ks, select_best, Distillation, GridConfig, GridSelection, HeatmapGrid,
    KnowledgeTopics, RangeEstimate,
};
pub use kmeans::{kmeans, ClusterResult};
pub use score::{adjusted_rand_index, silhouette_score};

/// Renumbers labels by order of first appearance, so equal partitions get
/// equal label vectors.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}
