use rand::seq::SliceRandom;
use rand::Rng;
use reportgen_core::clustering::{
    adjusted_rand_index, agglomerative, canonical_labels, coarse_range, dbscan, grid_select, kmeans,
    sample_ks, select_best, silhouette_score, GridConfig, HeatmapGrid, Linkage, RangeEstimate, NOISE,
};
use reportgen_core::corpus::generate_synthetic_corpus;
use reportgen_core::corpus::{preprocess_record, DefaultSegmenter, Vocabulary};
use reportgen_core::embedding::{tfidf_embed, EmbedMethod, EmbeddingMatrix};
use reportgen_core::matrix::Matrix;
use reportgen_core::rng::seeded;
use reportgen_core::Error;

fn four_points() -> Matrix {
    Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]]).unwrap()
}

fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-5.0f32..5.0)).collect()).unwrap()
}

/// Minimum wcss over every partition of the rows into exactly `k`
/// non-empty groups (restricted growth strings).
fn exhaustive_wcss(m: &Matrix, k: usize) -> f64 {
    fn cost(m: &Matrix, labels: &[usize], k: usize) -> f64 {
        let d = m.cols();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mean: Vec<f64> = (0..d)
                .map(|j| members.iter().map(|&i| m.row(i)[j] as f64).sum::<f64>() / members.len() as f64)
                .collect();
            for &i in &members {
                total += (0..d).map(|j| (m.row(i)[j] as f64 - mean[j]).powi(2)).sum::<f64>();
            }
        }
        total
    }
    fn rec(m: &Matrix, k: usize, labels: &mut Vec<usize>, used: usize, best: &mut f64) {
        let n = m.rows();
        if labels.len() == n {
            if used == k {
                *best = best.min(cost(m, labels, k));
            }
            return;
        }
        let remaining = n - labels.len();
        if used + remaining < k {
            return;
        }
        for c in 0..=used.min(k - 1) {
            labels.push(c);
            rec(m, k, labels, used.max(c + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(m, k, &mut Vec::new(), 0, &mut best);
    best
}

/// O(n²) silhouette straight from the definition.
fn brute_silhouette(m: &Matrix, labels: &[usize]) -> f64 {
    let n = m.rows();
    let dist = |i: usize, j: usize| {
        m.row(i).iter().zip(m.row(j)).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt()
    };
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
        let mut b = f64::INFINITY;
        for c in (0..k).filter(|&c| c != labels[i]) {
            let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            if !other.is_empty() {
                b = b.min(other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64);
            }
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[test]
fn four_point_instance_is_forced() {
    let r = kmeans(&four_points(), 2, 1, 5).unwrap();
    assert_eq!(r.assignments, vec![0, 0, 1, 1]);
    assert_eq!(r.centroids.row(0), &[0.0, 0.5]);
    assert_eq!(r.centroids.row(1), &[10.0, 10.5]);
    assert!((r.wcss - 1.0).abs() < 1e-12);
    let s = r.silhouette.unwrap();
    // a = 1, b = (sqrt(200) + sqrt(221)) / 2 for the first point, etc.
    let b1 = (200f64.sqrt() + 221f64.sqrt()) / 2.0;
    let b2 = (181f64.sqrt() + 200f64.sqrt()) / 2.0;
    let expect = ((1.0 - 1.0 / b1) + (1.0 - 1.0 / b2)) / 2.0;
    assert!((s - expect).abs() < 1e-9);
    assert!((s - 0.93).abs() < 0.005, "{s}");
}

#[test]
fn k_equal_n_has_zero_wcss() {
    let mut rng = seeded(1);
    let m = random_points(&mut rng, 7, 3);
    let r = kmeans(&m, 7, 0, 1).unwrap();
    assert_eq!(r.wcss, 0.0);
    let mut labels = r.assignments.clone();
    labels.sort_unstable();
    assert_eq!(labels, (0..7).collect::<Vec<_>>());
}

#[test]
fn kmeans_rejects_bad_parameters() {
    let m = four_points();
    assert!(matches!(kmeans(&m, 5, 0, 1), Err(Error::Config(_))));
    assert!(matches!(kmeans(&m, 0, 0, 1), Err(Error::Config(_))));
    assert!(matches!(kmeans(&m, 2, 0, 0), Err(Error::Config(_))));
}

#[test]
fn kmeans_matches_exhaustive_optimum_on_small_instances() {
    let mut rng = seeded(2024);
    let mut hits = 0;
    for trial in 0..100u64 {
        let n = rng.gen_range(3..=10);
        let k = rng.gen_range(1..=3usize.min(n));
        let d = rng.gen_range(1..=3);
        let m = random_points(&mut rng, n, d);
        let r = kmeans(&m, k, trial, 20).unwrap();
        let opt = exhaustive_wcss(&m, k);
        assert!(r.wcss >= opt * (1.0 - 1e-9) - 1e-12);
        if r.wcss <= opt * (1.0 + 1e-9) + 1e-12 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn kmeans_wcss_never_increases_and_is_deterministic() {
    let mut rng = seeded(5);
    for seed in 0..20 {
        let m = random_points(&mut rng, 80, 4);
        let r = kmeans(&m, 6, seed, 3).unwrap();
        for w in r.wcss_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.wcss_trace);
        }
        assert_eq!(r, kmeans(&m, 6, seed, 3).unwrap());
        // every cluster non-empty and each point at its nearest centroid
        let mut sizes = [0; 6];
        r.assignments.iter().for_each(|&c| sizes[c] += 1);
        assert!(sizes.iter().all(|&s| s > 0));
    }
}

#[test]
fn silhouette_matches_definition() {
    let mut rng = seeded(6);
    for trial in 0..40 {
        let n = rng.gen_range(4..=200);
        let k = rng.gen_range(2..=6usize.min(n));
        let m = random_points(&mut rng, n, 3);
        // random labels, guaranteed to use at least two clusters
        let mut labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.gen_range(0..k) }).collect();
        labels.shuffle(&mut rng);
        let s = silhouette_score(&m, &labels).unwrap();
        assert!((s - brute_silhouette(&m, &labels)).abs() < 1e-9, "trial {trial}");
        assert!((-1.0..=1.0).contains(&s));
    }
}

#[test]
fn silhouette_degenerate_conventions() {
    let dup = Matrix::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
    assert_eq!(silhouette_score(&dup, &[0, 0, 1, 1]).unwrap(), 0.0);
    assert!(matches!(silhouette_score(&dup, &[0, 0, 0, 0]), Err(Error::Config(_))));
    // singleton cluster members contribute 0
    let m = four_points();
    let s = silhouette_score(&m, &[0, 0, 0, 1]).unwrap();
    assert!((s - brute_silhouette(&m, &[0, 0, 0, 1])).abs() < 1e-12);
}

#[test]
fn dbscan_examples() {
    assert_eq!(dbscan(&four_points(), 2.0, 2).unwrap(), vec![0, 0, 1, 1]);
    let lone = Matrix::from_rows(&[vec![0.0], vec![0.05], vec![0.08], vec![50.0]]).unwrap();
    let labels = dbscan(&lone, 0.1, 2).unwrap();
    assert_eq!(labels[3], NOISE);
    assert_eq!(&labels[..3], &[0, 0, 0]);
    assert!(dbscan(&lone, 0.0, 2).is_err());
    assert!(dbscan(&lone, 1.0, 0).is_err());
}

#[test]
fn agglomerative_agrees_with_kmeans_on_forced_geometry() {
    let m = four_points();
    let km = kmeans(&m, 2, 0, 3).unwrap().assignments;
    for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
        assert_eq!(agglomerative(&m, 2, linkage).unwrap(), km);
    }
    assert_eq!(agglomerative(&m, 4, Linkage::Average).unwrap(), vec![0, 1, 2, 3]);
    assert!(agglomerative(&m, 5, Linkage::Average).is_err());
}

#[test]
fn average_linkage_matches_naive_recomputation() {
    // naive: recompute mean pairwise distance between clusters each merge
    let mut rng = seeded(8);
    for _ in 0..10 {
        let m = random_points(&mut rng, 12, 2);
        let n = 12;
        let dist = |i: usize, j: usize| {
            m.row(i).iter().zip(m.row(j)).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt()
        };
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        while clusters.len() > 3 {
            let mut best = (0, 0, f64::INFINITY);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let s: f64 = clusters[a].iter().flat_map(|&i| clusters[b].iter().map(move |&j| (i, j))).map(|(i, j)| dist(i, j)).sum();
                    let v = s / (clusters[a].len() * clusters[b].len()) as f64;
                    if v < best.2 {
                        best = (a, b, v);
                    }
                }
            }
            let moved = clusters.remove(best.1);
            clusters[best.0].extend(moved);
        }
        let mut expect = vec![0; n];
        for (c, members) in clusters.iter().enumerate() {
            for &i in members {
                expect[i] = c;
            }
        }
        assert_eq!(agglomerative(&m, 3, Linkage::Average).unwrap(), canonical_labels(&expect));
    }
}

#[test]
fn adjusted_rand_index_reference_values() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap() - 4.0 / 7.0).abs() < 1e-12);
    assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
    assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
}

#[test]
fn k_sampling_is_uniform_with_outward_padding() {
    assert_eq!(sample_ks(2, 18, 4, 2, 20), vec![2, 7, 13, 18]);
    assert_eq!(sample_ks(12, 18, 4, 2, 20), vec![12, 14, 16, 18]);
    assert_eq!(sample_ks(5, 5, 4, 2, 20), vec![3, 4, 5, 6]);
    assert_eq!(sample_ks(5, 6, 4, 2, 20), vec![4, 5, 6, 7]);
    assert_eq!(sample_ks(2, 3, 4, 2, 20), vec![2, 3, 4, 5]);
    assert_eq!(sample_ks(19, 20, 4, 2, 20), vec![17, 18, 19, 20]);
}

fn grid(method: EmbedMethod, rows: Vec<Vec<Option<f64>>>) -> HeatmapGrid {
    HeatmapGrid {
        method,
        range: RangeEstimate { lower: 2, upper: 5, silhouette_curve: vec![], wcss_curve: vec![] },
        ks: vec![2, 3, 4, 5],
        dims: vec![2, 5, 10, 50],
        scores: rows,
    }
}

#[test]
fn selection_tie_rules() {
    let mut rows = vec![vec![Some(0.1); 4]; 4];
    rows[1][2] = Some(0.8); // k=3, dim 10
    rows[1][3] = Some(0.8); // k=3, dim 50
    rows[0][3] = Some(0.8); // k=2, dim 50
    let (mi, sel) = select_best(&[grid(EmbedMethod::Bow, rows.clone())]).unwrap();
    assert_eq!((mi, sel.dim, sel.k), (0, 50, 3));
    // identical grid under a second method: the first method keeps it
    let (mi, sel) = select_best(&[grid(EmbedMethod::Bow, rows.clone()), grid(EmbedMethod::Tfidf, rows.clone())]).unwrap();
    assert_eq!((mi, sel.embed_method), (0, EmbedMethod::Bow));
    rows[3][0] = Some(0.9);
    let (_, sel) = select_best(&[grid(EmbedMethod::Tfidf, rows)]).unwrap();
    assert_eq!((sel.dim, sel.k, sel.silhouette), (2, 5, 0.9));
    assert!(select_best(&[grid(EmbedMethod::Bow, vec![vec![None; 4]; 4])]).is_none());
}

fn planted(n_templates: usize, n: usize, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
    let synth = generate_synthetic_corpus(n_templates, n, seed).unwrap();
    let reports: Vec<_> = synth.records.iter().map(|r| preprocess_record(r, &DefaultSegmenter).unwrap()).collect();
    let vocab = Vocabulary::build(&reports);
    (tfidf_embed(&reports, &vocab).unwrap(), synth.labels)
}

#[test]
fn coarse_range_brackets_planted_topic_count() {
    let (emb, _) = planted(5, 200, 7);
    let range = coarse_range(&emb.matrix, &GridConfig::default(), 3).unwrap();
    assert!(range.lower <= 5 && 5 <= range.upper, "{:?}", (range.lower, range.upper));
    assert_eq!(range.silhouette_curve.len(), 19);
    let small = Matrix::zeros(20, 3);
    assert!(matches!(coarse_range(&small, &GridConfig::default(), 0), Err(Error::DatasetTooSmall { .. })));
}

#[test]
fn grid_select_recovers_planted_topics_and_ignores_row_order() {
    let (emb, labels) = planted(5, 200, 11);
    let cfg = GridConfig { seed: 5, ..GridConfig::default() };
    let out = grid_select(std::slice::from_ref(&emb), &cfg).unwrap();
    assert_eq!(out.selection.k, 5);
    let found: Vec<usize> = emb.report_ids.iter().map(|id| out.topics.topics[id]).collect();
    let ari = adjusted_rand_index(&found, &labels).unwrap();
    assert!(ari >= 0.9, "ARI {ari}");
    assert_eq!(out.grids[0].to_csv().lines().count(), 5);

    let mut perm: Vec<usize> = (0..200).collect();
    perm.shuffle(&mut seeded(1));
    let shuffled = EmbeddingMatrix {
        matrix: emb.matrix.select_rows(&perm),
        method: emb.method,
        report_ids: perm.iter().map(|&i| emb.report_ids[i].clone()).collect(),
        columns: emb.columns.clone(),
    };
    assert_eq!(grid_select(&[shuffled], &cfg).unwrap(), out);
}
