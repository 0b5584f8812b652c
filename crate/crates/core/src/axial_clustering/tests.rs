use super::*;
use crate::backend::mock::MockBackend;
use crate::embedding::{ReductionKind, TestHashProvider};

fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).unwrap()
}

/// Two ten-point rings of radius 0.1 centred 10 apart, plus a far outlier.
fn two_blobs() -> EmbeddingMatrix {
    let mut rows = Vec::new();
    for center in [(0.0, 0.0), (10.0, 0.0)] {
        for i in 0..10 {
            let t = i as f64 * std::f64::consts::TAU / 10.0;
            rows.push(vec![center.0 + 0.1 * t.cos(), center.1 + 0.1 * t.sin()]);
        }
    }
    rows.push(vec![50.0, 50.0]);
    matrix(rows)
}

/// Four tight groups of `per` points on the corners of a square.
fn four_groups(per: usize) -> (EmbeddingMatrix, Vec<usize>) {
    let corners = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0), (8.0, 8.0)];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (g, c) in corners.iter().enumerate() {
        for i in 0..per {
            let t = i as f64 * 0.9;
            rows.push(vec![c.0 + 0.2 * t.sin(), c.1 + 0.2 * t.cos()]);
            truth.push(g);
        }
    }
    (matrix(rows), truth)
}

fn raw_cfg(a: Algorithm) -> ClusteringConfig {
    ClusteringConfig { normalize: false, ..ClusteringConfig::new(a) }
}

/// Same partition up to renaming.
fn same_partition(a: &[i64], b: &[usize]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *fwd.entry(*x).or_insert(*y) == *y && *back.entry(*y).or_insert(*x) == *x)
}

#[test]
fn dbscan_two_blobs_and_an_outlier() {
    let r = run_clustering(&two_blobs(), &raw_cfg(Algorithm::Dbscan { eps: 0.5, min_samples: 3 })).unwrap();
    assert_eq!(r.n_clusters, 2);
    assert_eq!(r.noise_points, 1);
    assert_eq!(r.labels[20], -1);
    assert!((r.noise_rate - 1.0 / 21.0).abs() < 1e-15);
}

#[test]
fn dbscan_border_point_joins_nearest_core() {
    // 0.9 is within eps of core 0.0 (left) and core 1.7 (right) but has only
    // three neighbours itself, so it is a border point of both
    let xs = [-0.9, -0.6, -0.3, 0.0, 0.9, 1.7, 2.0, 2.3, 2.6];
    let m = matrix(xs.iter().map(|&x| vec![x]).collect());
    let labels = dbscan(&m, 1.0, 4);
    assert!(labels.iter().all(|&l| l >= 0));
    assert_ne!(labels[3], labels[5]);
    assert_eq!(labels[4], labels[5]);
}

#[test]
fn partitioning_methods_recover_four_groups() {
    let (m, truth) = four_groups(8);
    for a in [
        Algorithm::Kmeans { k: 4 },
        Algorithm::Agglomerative { k: 4 },
        Algorithm::Spectral { k: 4, n_neighbors: 5 },
        Algorithm::Gmm { k: 4 },
    ] {
        let r = run_clustering(&m, &raw_cfg(a.clone()).with_seed(7)).unwrap();
        assert_eq!(r.n_clusters, 4, "{a:?}");
        assert_eq!(r.noise_points, 0);
        assert!(same_partition(&r.labels, &truth), "{a:?}: {:?}", r.labels);
    }
}

#[test]
fn hdbscan_finds_blobs_and_respects_min_size() {
    let (m, truth) = four_groups(8);
    let r = run_clustering(&m, &raw_cfg(Algorithm::Hdbscan { min_cluster_size: 5, min_samples: None })).unwrap();
    assert_eq!(r.n_clusters, 4);
    assert!(same_partition(&r.labels, &truth));
    let r = run_clustering(&two_blobs(), &raw_cfg(Algorithm::Hdbscan { min_cluster_size: 5, min_samples: Some(3) })).unwrap();
    assert_eq!(r.n_clusters, 2);
    assert_eq!(r.labels[20], -1);
}

#[test]
fn every_algorithm_is_deterministic() {
    let (m, _) = four_groups(6);
    for a in [
        Algorithm::Kmeans { k: 6 },
        Algorithm::Agglomerative { k: 6 },
        Algorithm::Spectral { k: 6, n_neighbors: 4 },
        Algorithm::Gmm { k: 6 },
        Algorithm::Dbscan { eps: 0.3, min_samples: 3 },
        Algorithm::Hdbscan { min_cluster_size: 3, min_samples: None },
    ] {
        let cfg = raw_cfg(a).with_seed(11);
        assert_eq!(run_clustering(&m, &cfg).unwrap(), run_clustering(&m, &cfg).unwrap());
    }
}

#[test]
fn identical_points_are_one_degenerate_cluster() {
    let m = matrix(vec![vec![1.0, 1.0]; 6]);
    let r = run_clustering(&m, &raw_cfg(Algorithm::Kmeans { k: 4 })).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.n_clusters, 1);
    assert_eq!((r.silhouette, r.dbi, r.chi), (None, None, None));
}

#[test]
fn preconditions() {
    let m = matrix(vec![vec![0.0], vec![1.0], vec![2.0]]);
    assert!(matches!(run_clustering(&m, &raw_cfg(Algorithm::Kmeans { k: 4 })), Err(ClusteringError::TooFewItems { need: 4, got: 3 })));
    assert!(matches!(run_clustering(&m, &raw_cfg(Algorithm::Kmeans { k: 5 })), Err(ClusteringError::BadK(5))));
    assert!(matches!(run_clustering(&m, &raw_cfg(Algorithm::Gmm { k: 22 })), Err(ClusteringError::BadK(22))));
    assert!(matches!(
        run_clustering(&m, &raw_cfg(Algorithm::Dbscan { eps: 0.0, min_samples: 2 })),
        Err(ClusteringError::BadParam(_))
    ));
}

#[test]
fn tight_pairs_have_silhouette_near_one() {
    let eps = 0.01;
    let m = matrix(vec![vec![0.0, 0.0], vec![0.0, eps], vec![10.0, 10.0], vec![10.0, 10.0 + eps]]);
    let s = silhouette_core(&m, &[0, 0, 1, 1]).unwrap();
    assert!(s > 0.95);
    assert_eq!(silhouette_core(&m, &[0, 0, 0, 0]), None);
    assert_eq!(davies_bouldin(&m, &[0, 0, 0, 0]), None);
    assert_eq!(calinski_harabasz(&m, &[0, 0, 0, 0]), None);
}

#[test]
fn core_silhouette_ignores_noise() {
    let m = matrix(vec![vec![0.0], vec![0.1], vec![5.0], vec![5.1], vec![100.0]]);
    let with_noise = [0, 0, 1, 1, -1];
    let core = silhouette_core(&m, &with_noise).unwrap();
    let plain = silhouette_core(&m.select(&[0, 1, 2, 3]), &[0, 0, 1, 1]).unwrap();
    assert_eq!(core, plain);
    assert!(silhouette_global(&m, &with_noise).unwrap() < core);
}

#[test]
fn chi_with_zero_dispersion_is_one() {
    let m = matrix(vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]]);
    assert_eq!(calinski_harabasz(&m, &[0, 0, 1, 1]), Some(1.0));
}

#[test]
fn canonical_labels_follow_first_appearance() {
    assert_eq!(canonical_labels(&[5, -1, 5, 2, 9, 2]), vec![0, -1, 0, 1, 2, 1]);
}

fn fake_run(silhouette: Option<f64>, dbi: Option<f64>, chi: Option<f64>) -> ClusterRunResult {
    ClusterRunResult {
        config: ClusteringConfig::new(Algorithm::Kmeans { k: 4 }),
        keys: vec![],
        labels: vec![],
        n_clusters: 0,
        noise_points: 0,
        noise_rate: 0.0,
        silhouette,
        dbi,
        chi,
        degenerate: false,
    }
}

#[test]
fn ranking_prefers_silhouette_then_dbi_then_chi() {
    let mut runs = [
        fake_run(None, Some(0.1), Some(100.0)),
        fake_run(Some(0.5), Some(1.0), Some(1.0)),
        fake_run(Some(0.8), Some(2.0), Some(1.0)),
        fake_run(Some(0.5), Some(0.5), Some(1.0)),
        fake_run(Some(0.5), Some(0.5), Some(9.0)),
    ];
    runs.sort_by(rank_order);
    let order: Vec<(Option<f64>, Option<f64>, Option<f64>)> = runs.iter().map(|r| (r.silhouette, r.dbi, r.chi)).collect();
    assert_eq!(
        order,
        vec![
            (Some(0.8), Some(2.0), Some(1.0)),
            (Some(0.5), Some(0.5), Some(9.0)),
            (Some(0.5), Some(0.5), Some(1.0)),
            (Some(0.5), Some(1.0), Some(1.0)),
            (None, Some(0.1), Some(100.0)),
        ]
    );
}

#[test]
fn sweep_skips_umap_and_records_failures() {
    let (m, _) = four_groups(6);
    let embeddings = BTreeMap::from([("pts".to_string(), m)]);
    let base = |a| ClusteringConfig::new(a).with_embedder("pts");
    let grid = vec![
        base(Algorithm::Kmeans { k: 4 }),
        base(Algorithm::Kmeans { k: 4 }).with_reduction(ReductionSpec::umap_default(0)),
        base(Algorithm::Kmeans { k: 4 }).with_embedder("missing"),
        base(Algorithm::Dbscan { eps: 0.3, min_samples: 3 }),
    ];
    let report = sweep(&embeddings, &grid);
    assert_eq!(report.ranked.len(), 2);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].config.reduction.kind, ReductionKind::Umap);
    assert_eq!(report.failed.len(), 1);
    for w in report.ranked.windows(2) {
        assert_ne!(rank_order(&w[0], &w[1]), std::cmp::Ordering::Greater);
    }
    let table = report.table();
    assert_eq!(table[0].embedding, "pts");
}

#[test]
fn default_grid_shape() {
    let grid = default_grid("e", ReductionSpec::none(), 0);
    assert_eq!(grid.len(), 9 * 4 + 9 + 3);
    assert!(grid.iter().all(|c| c.algorithm.validate().is_ok()));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ClusteringConfig::new(Algorithm::Dbscan { eps: 0.3, min_samples: 20 }).with_reduction(ReductionSpec::pca_default());
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"algorithm\":\"dbscan\""));
    let back: ClusteringConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let with_defaults: ClusteringConfig = serde_json::from_str(r#"{"algorithm":"spectral","k":6}"#).unwrap();
    assert_eq!(with_defaults.algorithm, Algorithm::Spectral { k: 6, n_neighbors: 10 });
    assert!(with_defaults.normalize);
}

fn coded(id: &str, code: &str) -> CodedUtterance {
    CodedUtterance {
        utterance_id: id.into(),
        text: format!("utterance {id} about {code}"),
        candidates: vec![],
        failures: vec![],
        moderator: None,
        refined_code: Some(code.into()),
        reused: false,
        uncodable: false,
    }
}

fn run_with(labels: Vec<i64>) -> ClusterRunResult {
    let keys: Vec<String> = (0..labels.len()).map(|i| format!("u{i}")).collect();
    let noise_points = labels.iter().filter(|&&l| l < 0).count();
    ClusterRunResult {
        keys,
        n_clusters: labels.iter().filter(|&&l| l >= 0).collect::<BTreeSet<_>>().len(),
        noise_points,
        noise_rate: noise_points as f64 / labels.len() as f64,
        labels,
        ..fake_run(None, None, None)
    }
}

#[test]
fn passthrough_labeler_names_after_shared_code() {
    let run = run_with(vec![0, 0, 0]);
    let c: Vec<CodedUtterance> = (0..3).map(|i| coded(&format!("u{i}"), "asylum policy")).collect();
    let labeler = MockBackend::parse("l", "first").unwrap();
    let s = label_clusters(&run, &c, &labeler, &PromptTemplates::default(), &LabelingOptions::default()).unwrap();
    assert_eq!(s.categories[0].label, "asylum policy");
}

#[test]
fn coverage_is_one_minus_noise_rate() {
    let run = run_with(vec![0, 1, 2, -1, 0, 1, -1, 2, 2, 0]);
    let c: Vec<CodedUtterance> = (0..10).map(|i| coded(&format!("u{i}"), ["tax", "health", "army"][i % 3])).collect();
    let labeler = MockBackend::parse("l", "first").unwrap();
    let s = label_clusters(&run, &c, &labeler, &PromptTemplates::default(), &LabelingOptions::default()).unwrap();
    assert_eq!(s.categories.len(), 3);
    assert_eq!(s.coverage(10) + run.noise_rate, 1.0);
    assert_eq!(s.unassigned, BTreeSet::from(["u3".to_string(), "u6".to_string()]));
    assert!(s.validate(None).is_ok());
}

#[test]
fn long_names_are_truncated_and_failures_fall_back() {
    let run = run_with(vec![0, 0, 1]);
    let c = vec![coded("u0", "rent"), coded("u1", "rent"), coded("u2", "tanks")];
    let long = MockBackend::parse("l", "fixed:one two three four five six seven eight").unwrap();
    let s = label_clusters(&run, &c, &long, &PromptTemplates::default(), &LabelingOptions::default()).unwrap();
    assert_eq!(s.categories[0].label, "one two three four five");
    assert!(s.provenance.iter().any(|p| matches!(p, Provenance::Named { truncated: true, .. })));

    let dead = MockBackend::parse("l", "fail").unwrap();
    let s = label_clusters(&run, &c, &dead, &PromptTemplates::default(), &LabelingOptions::default()).unwrap();
    assert_eq!(s.categories[0].label, "rent");
    assert_eq!(s.categories[1].label, "tanks");
    assert!(s.provenance.iter().all(|p| matches!(p, Provenance::Named { fallback: true, .. })));
}

#[test]
fn labeler_sees_codes_by_frequency() {
    let run = run_with(vec![0, 0, 0, 0]);
    let c = vec![coded("u0", "b"), coded("u1", "a"), coded("u2", "b"), coded("u3", "c")];
    let probe = crate::backend::mock::ScriptedBackend::new("l", vec![Ok("name".into())]);
    let opts = LabelingOptions { sample_size: 2, ..Default::default() };
    label_clusters(&run, &c, &probe, &PromptTemplates::default(), &opts).unwrap();
    match &probe.requests()[0].task {
        Task::NameCluster { codes, snippets } => {
            assert_eq!(codes, &["b", "a"]);
            assert!(snippets.is_empty());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn embedding_items_join_code_and_text() {
    let c = vec![coded("u0", "rent"), CodedUtterance { refined_code: None, uncodable: true, ..coded("u1", "x") }];
    let texts = item_texts(&c);
    assert_eq!(texts, vec![("u0".to_string(), "rent \u{2014} utterance u0 about rent".to_string())]);
    let m = embed_items(&c, &TestHashProvider::new(16)).unwrap();
    assert_eq!(m.keys(), ["u0"]);
}

#[test]
fn pipeline_normalizes_after_reduction() {
    let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 + 1.0, (i * i) as f64 * 0.1, 3.0]).collect();
    let m = matrix(rows);
    let cfg = ClusteringConfig::new(Algorithm::Kmeans { k: 4 }).with_reduction(ReductionSpec::pca(2));
    let p = prepare(&m, &cfg).unwrap();
    assert_eq!(p.dim(), 2);
    for r in p.rows() {
        assert!((r.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
