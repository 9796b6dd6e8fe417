use nalgebra::DMatrix;

use super::ReducedMatrix;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// A fitted principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `target_dim` orthonormal rows of length `cols`, by decreasing variance.
    pub components: Vec<Vec<f64>>,
}

impl Pca {
    pub fn project(&self, row: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((&w, &x), &m)| w * (x as f64 - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in self.components.iter().zip(coords) {
            for (o, &w) in out.iter_mut().zip(c) {
                *o += z * w;
            }
        }
        out
    }

    /// Sum of squared reconstruction errors over `data`.
    pub fn reconstruction_error(&self, data: &Matrix) -> f64 {
        data.iter_rows()
            .map(|row| {
                let back = self.reconstruct(&self.project(row));
                back.iter().zip(row).map(|(&b, &x)| (b - x as f64).powi(2)).sum::<f64>()
            })
            .sum()
    }
}

pub fn pca_fit(data: &Matrix, target_dim: usize) -> Result<Pca> {
    let (n, y) = (data.rows(), data.cols());
    if target_dim == 0 || target_dim > n.min(y) {
        return Err(Error::config(format!("PCA target_dim {target_dim} outside [1, {}]", n.min(y))));
    }
    let mut mean = vec![0.0f64; y];
    for row in data.iter_rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, y, |i, j| data.row(i)[j] as f64 - mean[j]);
    let svd = centered.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Fit("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let components = order
        .into_iter()
        .take(target_dim)
        .map(|r| {
            let mut c: Vec<f64> = vt.row(r).iter().copied().collect();
            // sign convention: largest-magnitude loading is positive
            let pivot = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect::<Vec<_>>();
    if components.len() < target_dim {
        return Err(Error::config(format!("PCA target_dim {target_dim} exceeds rank-revealing components")));
    }
    Ok(Pca { mean, components })
}

/// Mean-centred projection onto the top `target_dim` principal components.
pub fn pca_reduce(data: &Matrix, target_dim: usize) -> Result<ReducedMatrix> {
    let pca = pca_fit(data, target_dim)?;
    let rows: Vec<f32> = data.iter_rows().flat_map(|r| pca.project(r)).map(|v| v as f32).collect();
    Ok(ReducedMatrix { matrix: Matrix::new(data.rows(), target_dim, rows)?, config: None })
}
