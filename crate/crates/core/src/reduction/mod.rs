//! Dimensionality reduction of embedding matrices.
//!
//! [`umap_reduce`] is the reducer used by the distiller; [`pca_reduce`] is a
//! linear reference used in tests and as a sanity baseline.

mod pca;
mod umap;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub use pca::{pca_fit, pca_reduce, Pca};
pub use umap::{fit_curve, fuzzy_union, knn, smooth_knn, umap_reduce, FuzzyGraph, Neighbors, Smoothing};

/// UMAP parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub n_neighbors: usize,
    pub min_dist: f32,
    pub target_dim: usize,
    pub n_epochs: usize,
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { n_neighbors: 15, min_dist: 0.1, target_dim: 2, n_epochs: 200, negative_samples: 5, seed: 0 }
    }
}

/// Output of a reducer. `config` is `None` for PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub matrix: Matrix,
    pub config: Option<LayoutConfig>,
}
