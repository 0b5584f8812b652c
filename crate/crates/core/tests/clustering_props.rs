use std::collections::HashMap;

use axcode::axial_clustering::{dbscan, hdbscan, run_clustering, Algorithm, ClusteringConfig};
use axcode::embedding::EmbeddingMatrix;
use proptest::prelude::*;

/// Brute-force density reachability: union-find over core pairs within eps,
/// border points to the component of their nearest core (lowest index on ties).
fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    let dist = |a: usize, b: usize| -> f64 {
        points[a].iter().zip(&points[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| dist(i, j) <= eps).count() >= min_samples).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = root(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && dist(i, j) <= eps {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut owner = vec![None; n];
    for i in 0..n {
        if core[i] {
            owner[i] = Some(root(&mut parent, i));
        } else {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..n {
                if core[j] && dist(i, j) <= eps && best.is_none_or(|(d, _)| dist(i, j) < d) {
                    best = Some((dist(i, j), j));
                }
            }
            owner[i] = best.map(|(_, j)| root(&mut parent, j));
        }
    }
    owner.into_iter().map(|o| o.map_or(-1, |r| r as i64)).collect()
}

/// Equal as partitions, with noise matched to noise.
fn same_partition(a: &[i64], b: &[i64]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.len() == b.len()
        && a.iter().zip(b).all(|(&x, &y)| {
            (x < 0) == (y < 0) && *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
        })
}

fn fixture() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=4).prop_flat_map(|dim| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 6..80))
}

fn matrix(points: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(points.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dbscan_matches_reachability_oracle(points in fixture(), eps in 0.2f64..1.5, ms in 1usize..8) {
        let labels = dbscan(&matrix(&points), eps, ms);
        prop_assert!(same_partition(&labels, &dbscan_oracle(&points, eps, ms)));
    }

    #[test]
    fn hdbscan_clusters_meet_min_size(points in fixture(), mcs in 2usize..10, ms in prop::option::of(1usize..6)) {
        let labels = hdbscan(&matrix(&points), mcs, ms);
        let mut sizes: HashMap<i64, usize> = HashMap::new();
        for l in labels.iter().filter(|&&l| l >= 0) {
            *sizes.entry(*l).or_default() += 1;
        }
        prop_assert!(sizes.values().all(|&s| s >= mcs), "{sizes:?}");
    }

    #[test]
    fn runs_ignore_input_order(points in general_position(), seed in any::<u64>(), algo in 0usize..6) {
        let n = points.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let algorithm = [
            Algorithm::Kmeans { k: 4 },
            Algorithm::Agglomerative { k: 4 },
            Algorithm::Spectral { k: 4, n_neighbors: 5 },
            Algorithm::Gmm { k: 4 },
            Algorithm::Dbscan { eps: 0.8, min_samples: 3 },
            Algorithm::Hdbscan { min_cluster_size: 4, min_samples: None },
        ][algo].clone();
        let cfg = ClusteringConfig { normalize: false, ..ClusteringConfig::new(algorithm) }.with_seed(seed);
        let a = run_clustering(&matrix(&points), &cfg).unwrap().labels;
        let b = run_clustering(&matrix(&shuffled), &cfg).unwrap().labels;
        let mut back = vec![0; n];
        for (pos, &orig) in perm.iter().enumerate() {
            back[orig] = b[pos];
        }
        prop_assert!(same_partition(&a, &back));
    }
}

/// Points with no repeated coordinates.
fn general_position() -> impl Strategy<Value = Vec<Vec<f64>>> {
    fixture().prop_filter("distinct points", |pts| {
        (0..pts.len()).all(|i| (i + 1..pts.len()).all(|j| pts[i] != pts[j]))
    })
}
