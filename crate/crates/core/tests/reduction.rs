use rand::Rng;
use rand_distr::StandardNormal;
use reportgen_core::matrix::Matrix;
use reportgen_core::reduction::{
    fit_curve, fuzzy_union, knn, pca_fit, pca_reduce, smooth_knn, umap_reduce, LayoutConfig,
};
use reportgen_core::rng::seeded;
use reportgen_core::Error;

fn random_matrix(seed: u64, n: usize, d: usize) -> Matrix {
    let mut rng = seeded(seed);
    Matrix::new(n, d, (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).unwrap()
}

/// Two unit-variance Gaussian blobs whose centres are 10σ apart.
fn blobs(seed: u64, per: usize, d: usize) -> (Matrix, Vec<usize>) {
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(2 * per * d);
    let mut labels = Vec::new();
    for blob in 0..2 {
        for _ in 0..per {
            for j in 0..d {
                let centre = if j == 0 && blob == 1 { 10.0 } else { 0.0 };
                data.push(centre + rng.sample::<f32, _>(StandardNormal));
            }
            labels.push(blob);
        }
    }
    (Matrix::new(2 * per, d, data).unwrap(), labels)
}

/// Lloyd's 2-means from the two mutually farthest points, then purity.
fn two_means_purity(m: &Matrix, labels: &[usize]) -> f64 {
    let n = m.rows();
    let d2 = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
    let (mut s, mut t, mut best) = (0, 0, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let v = d2(m.row(i), m.row(j));
            if v > best {
                (s, t, best) = (i, j, v);
            }
        }
    }
    let mut c = [m.row(s).to_vec(), m.row(t).to_vec()];
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        for i in 0..n {
            assign[i] = usize::from(d2(m.row(i), &c[1]) < d2(m.row(i), &c[0]));
        }
        for (k, ck) in c.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
            for (j, v) in ck.iter_mut().enumerate() {
                *v = members.iter().map(|&i| m.row(i)[j]).sum::<f32>() / members.len().max(1) as f32;
            }
        }
    }
    let agree = (0..n).filter(|&i| assign[i] == labels[i]).count();
    agree.max(n - agree) as f64 / n as f64
}

#[test]
fn curve_fit_matches_grid_search_oracle() {
    let md = 0.1f64;
    let pts: Vec<(f64, f64)> = (0..300)
        .map(|i| {
            let d = 3.0 * i as f64 / 299.0;
            (d, if d <= md { 1.0 } else { (-(d - md)).exp() })
        })
        .collect();
    let loss = |a: f64, b: f64| pts.iter().map(|&(d, y)| (1.0 / (1.0 + a * d.powf(2.0 * b)) - y).powi(2)).sum::<f64>();
    // coarse grid then two refinements
    let (mut ba, mut bb) = (1.0, 1.0);
    let mut span = (1.0, 0.5);
    let mut centre = (1.5, 0.9);
    for _ in 0..3 {
        let mut best = f64::INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let a = centre.0 - span.0 + 2.0 * span.0 * i as f64 / 100.0;
                let b = centre.1 - span.1 + 2.0 * span.1 * j as f64 / 100.0;
                if a <= 0.0 || b <= 0.0 {
                    continue;
                }
                let l = loss(a, b);
                if l < best {
                    (best, ba, bb) = (l, a, b);
                }
            }
        }
        centre = (ba, bb);
        span = (span.0 / 20.0, span.1 / 20.0);
    }
    let (a, b) = fit_curve(0.1).unwrap();
    assert!((a as f64 - ba).abs() < 2e-3, "a {a} vs oracle {ba}");
    assert!((b as f64 - bb).abs() < 2e-3, "b {b} vs oracle {bb}");
    assert!((a - 1.58).abs() < 0.05 && (b - 0.90).abs() < 0.05, "({a}, {b})");
}

#[test]
fn fitted_curve_is_one_at_zero_and_strictly_decreasing() {
    for md in [0.05f32, 0.1, 0.3, 0.5, 0.9] {
        let (a, b) = fit_curve(md).unwrap();
        let f = |d: f64| 1.0 / (1.0 + a as f64 * d.powf(2.0 * b as f64));
        assert!((f(0.0) - 1.0).abs() < 1e-6);
        let mut prev = f(0.0);
        for i in 1..=300 {
            let v = f(3.0 * i as f64 / 300.0);
            assert!(v < prev);
            prev = v;
        }
    }
}

#[test]
fn curve_fit_rejects_out_of_range_min_dist() {
    for md in [0.0f32, 1.0, -0.2, f32::NAN] {
        assert!(matches!(fit_curve(md), Err(Error::Config(_))));
    }
}

#[test]
fn umap_output_shape_and_determinism() {
    let m = random_matrix(1, 200, 20);
    let cfg = LayoutConfig { n_epochs: 50, seed: 7, ..LayoutConfig::default() };
    let r1 = umap_reduce(&m, &cfg).unwrap();
    let r2 = umap_reduce(&m, &cfg).unwrap();
    assert_eq!((r1.matrix.rows(), r1.matrix.cols()), (200, 2));
    assert!(r1.matrix.is_finite());
    assert_eq!(r1.matrix.to_bytes(), r2.matrix.to_bytes());
    let r3 = umap_reduce(&m, &LayoutConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(r1.matrix.to_bytes(), r3.matrix.to_bytes());
    assert_eq!(r1.config, Some(cfg));
}

#[test]
fn umap_rejects_bad_configs() {
    let m = random_matrix(2, 15, 5);
    let base = LayoutConfig::default();
    assert!(matches!(umap_reduce(&m, &base), Err(Error::Config(_))));
    let ok = LayoutConfig { n_neighbors: 5, ..base };
    assert!(umap_reduce(&m, &ok).is_ok());
    assert!(matches!(umap_reduce(&m, &LayoutConfig { target_dim: 5, ..ok }), Err(Error::Config(_))));
    assert!(matches!(umap_reduce(&m, &LayoutConfig { n_epochs: 0, ..ok }), Err(Error::Config(_))));
    assert!(matches!(umap_reduce(&m, &LayoutConfig { n_neighbors: 1, ..ok }), Err(Error::Config(_))));
}

#[test]
fn knn_graph_invariants() {
    let mut m = random_matrix(3, 60, 8);
    // a duplicated point must still not be its own neighbour
    let dup = m.row(0).to_vec();
    m.row_mut(1).copy_from_slice(&dup);
    let nb = knn(&m, 10).unwrap();
    for (i, row) in nb.iter().enumerate() {
        assert_eq!(row.len(), 10);
        assert!(row.iter().all(|&(j, _)| j != i));
        assert!(row.windows(2).all(|w| w[0].1 <= w[1].1));
    }
    assert_eq!(nb[0][0], (1, 0.0));
}

#[test]
fn smoothed_memberships_sum_to_log2_k_and_union_is_symmetric() {
    for seed in 0..3 {
        let m = random_matrix(10 + seed, 80, 12);
        let k = 15;
        let nb = knn(&m, k).unwrap();
        let sm = smooth_knn(&nb);
        for (row, s) in nb.iter().zip(&sm) {
            assert_eq!(s.rho, row[0].1);
            let total: f64 = row.iter().map(|&(_, d)| (-(d - s.rho).max(0.0) / s.sigma).exp()).sum();
            assert!((total - (k as f64).log2()).abs() < 1e-3, "{total}");
        }
        let g = fuzzy_union(&nb, &sm);
        for (&(i, j), &w) in &g.weights {
            assert_eq!(w, g.get(j, i));
            assert!(w > 0.0 && w <= 1.0);
        }
    }
}

#[test]
fn separated_blobs_stay_separated() {
    for seed in [11u64, 22, 33] {
        let (m, labels) = blobs(seed, 100, 50);
        let cfg = LayoutConfig { seed, ..LayoutConfig::default() };
        let r = umap_reduce(&m, &cfg).unwrap();
        let purity = two_means_purity(&r.matrix, &labels);
        assert!(purity >= 0.95, "seed {seed}: purity {purity}");
    }
}

#[test]
fn pca_recovers_planar_data_exactly() {
    let mut rng = seeded(4);
    let u: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f32>> = (0..40)
        .map(|_| {
            let (s, t): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            (0..10).map(|j| (1.0 + s * u[j] + t * v[j]) as f32).collect()
        })
        .collect();
    let m = Matrix::from_rows(&rows).unwrap();
    let p = pca_fit(&m, 2).unwrap();
    // f32 storage of the input bounds the achievable residual
    assert!(p.reconstruction_error(&m) <= 1e-6, "{}", p.reconstruction_error(&m));
    let r = pca_reduce(&m, 2).unwrap();
    assert_eq!((r.matrix.rows(), r.matrix.cols()), (40, 2));
    assert!(r.config.is_none());
}

#[test]
fn pca_full_rank_is_lossless_and_error_shrinks_with_dim() {
    let m = random_matrix(5, 50, 10);
    assert!(pca_fit(&m, 10).unwrap().reconstruction_error(&m) <= 1e-6);
    let errs: Vec<f64> = (1..=10).map(|d| pca_fit(&m, d).unwrap().reconstruction_error(&m)).collect();
    assert!(errs[4] <= errs[1]);
    assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    // components are orthonormal
    let p = pca_fit(&m, 4).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
            assert!((dot - f64::from(i == j)).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_rejects_bad_dims() {
    let m = random_matrix(6, 5, 8);
    assert!(matches!(pca_fit(&m, 0), Err(Error::Config(_))));
    assert!(matches!(pca_fit(&m, 6), Err(Error::Config(_))));
    assert!(pca_fit(&m, 5).is_ok());
}
