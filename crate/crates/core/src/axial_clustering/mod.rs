//! Axial coding by clustering code/utterance embeddings.
//!
//! Each coded utterance is embedded as `code — text`, optionally reduced and
//! L2-normalized, and clustered. A sweep ranks configurations by internal
//! indices; the chosen run is then named cluster by cluster by a labeler
//! backend.

mod agglomerative;
mod dbscan;
mod gmm;
mod hdbscan;
mod kmeans;
pub mod metrics;
pub mod spectral;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agglomerative::ward;
pub use dbscan::dbscan;
pub use gmm::gmm;
pub use hdbscan::hdbscan;
pub use kmeans::{kmeans, KMeansFit};
pub use metrics::{calinski_harabasz, davies_bouldin, score_internal, silhouette_core, silhouette_global, InternalScores};

use crate::backend::{ChatBackend, ChatRequest, PromptTemplates, Task};
use crate::category::{Category, CategorySystem, Provenance};
use crate::embedding::{embed_keyed, reduce, EmbeddingError, EmbeddingMatrix, EmbeddingProvider, ReductionSpec};
use crate::open_coding::CodedUtterance;
use crate::text::{clean_label, MAX_LABEL_WORDS};

/// Joins a code and its utterance into one embedding input.
pub const ITEM_SEPARATOR: &str = " \u{2014} ";

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("k = {0} must be even and within [4, 20]")]
    BadK(usize),
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("need at least {need} items, got {got}")]
    TooFewItems { need: usize, got: usize },
    #[error("no embeddings for `{0}`")]
    UnknownEmbedder(String),
    #[error("run has no clusters to name")]
    NoClusters,
    #[error("labels cover {labels} items but {items} were given")]
    LengthMismatch { labels: usize, items: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn default_neighbors() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Kmeans {
        k: usize,
    },
    Agglomerative {
        k: usize,
    },
    Spectral {
        k: usize,
        #[serde(default = "default_neighbors")]
        n_neighbors: usize,
    },
    Gmm {
        k: usize,
    },
    Dbscan {
        eps: f64,
        min_samples: usize,
    },
    Hdbscan {
        min_cluster_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_samples: Option<usize>,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Kmeans { .. } => "kmeans",
            Self::Agglomerative { .. } => "agglomerative",
            Self::Spectral { .. } => "spectral",
            Self::Gmm { .. } => "gmm",
            Self::Dbscan { .. } => "dbscan",
            Self::Hdbscan { .. } => "hdbscan",
        }
    }

    pub fn is_density(&self) -> bool {
        matches!(self, Self::Dbscan { .. } | Self::Hdbscan { .. })
    }

    pub fn params(&self) -> BTreeMap<String, serde_json::Value> {
        let mut p = BTreeMap::new();
        match *self {
            Self::Kmeans { k } | Self::Agglomerative { k } | Self::Gmm { k } => {
                p.insert("k".into(), k.into());
            }
            Self::Spectral { k, n_neighbors } => {
                p.insert("k".into(), k.into());
                p.insert("n_neighbors".into(), n_neighbors.into());
            }
            Self::Dbscan { eps, min_samples } => {
                p.insert("eps".into(), eps.into());
                p.insert("ms".into(), min_samples.into());
            }
            Self::Hdbscan { min_cluster_size, min_samples } => {
                p.insert("mcs".into(), min_cluster_size.into());
                if let Some(ms) = min_samples {
                    p.insert("ms".into(), ms.into());
                }
            }
        }
        p
    }

    /// Short parameter string such as `eps=0.3, ms=20`.
    pub fn param_string(&self) -> String {
        self.params().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
    }

    fn min_items(&self) -> usize {
        let need = match *self {
            Self::Kmeans { k } | Self::Agglomerative { k } | Self::Gmm { k } | Self::Spectral { k, .. } => k,
            Self::Dbscan { min_samples, .. } => min_samples,
            Self::Hdbscan { min_cluster_size, min_samples } => min_cluster_size.max(min_samples.unwrap_or(0)),
        };
        need.max(2)
    }

    pub fn validate(&self) -> Result<(), ClusteringError> {
        match *self {
            Self::Kmeans { k } | Self::Agglomerative { k } | Self::Gmm { k } | Self::Spectral { k, .. } => {
                if k % 2 != 0 || !(4..=20).contains(&k) {
                    return Err(ClusteringError::BadK(k));
                }
                if let Self::Spectral { n_neighbors: 0, .. } = self {
                    return Err(ClusteringError::BadParam("n_neighbors must be positive".into()));
                }
            }
            Self::Dbscan { eps, min_samples } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(ClusteringError::BadParam(format!("eps must be positive, got {eps}")));
                }
                if min_samples == 0 {
                    return Err(ClusteringError::BadParam("min_samples must be positive".into()));
                }
            }
            Self::Hdbscan { min_cluster_size, min_samples } => {
                if min_cluster_size < 2 {
                    return Err(ClusteringError::BadParam("min_cluster_size must be at least 2".into()));
                }
                if min_samples == Some(0) {
                    return Err(ClusteringError::BadParam("min_samples must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn default_embedder() -> String {
    "test-hash".into()
}

fn default_reduction() -> ReductionSpec {
    ReductionSpec::none()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_reduction")]
    pub reduction: ReductionSpec,
    #[serde(flatten)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    /// Scale vectors to unit length after reduction, so euclidean distance
    /// is monotone in cosine similarity.
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl ClusteringConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self { embedder: default_embedder(), reduction: ReductionSpec::none(), algorithm, seed: 0, normalize: true }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reduction(mut self, reduction: ReductionSpec) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_embedder(mut self, embedder: impl Into<String>) -> Self {
        self.embedder = embedder.into();
        self
    }

    pub fn label(&self) -> String {
        format!("{} | {} | {}({})", self.embedder, self.reduction.label(), self.algorithm.name(), self.algorithm.param_string())
    }
}

/// Every config of the standard grid for one embedder and reduction.
///
/// Partitioning methods take k in {4, 6, ..., 20}; DBSCAN takes eps in
/// {0.2, 0.3, 0.4} with ms in {5, 10, 20}; HDBSCAN takes mcs in {5, 10, 20}.
pub fn default_grid(embedder: &str, reduction: ReductionSpec, seed: u64) -> Vec<ClusteringConfig> {
    let mut algos = Vec::new();
    for k in (4..=20).step_by(2) {
        algos.push(Algorithm::Kmeans { k });
        algos.push(Algorithm::Agglomerative { k });
        algos.push(Algorithm::Spectral { k, n_neighbors: 10 });
        algos.push(Algorithm::Gmm { k });
    }
    for eps in [0.2, 0.3, 0.4] {
        for min_samples in [5, 10, 20] {
            algos.push(Algorithm::Dbscan { eps, min_samples });
        }
    }
    for min_cluster_size in [5, 10, 20] {
        algos.push(Algorithm::Hdbscan { min_cluster_size, min_samples: None });
    }
    algos
        .into_iter()
        .map(|a| ClusteringConfig::new(a).with_embedder(embedder).with_reduction(reduction).with_seed(seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRunResult {
    pub config: ClusteringConfig,
    pub keys: Vec<String>,
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    pub noise_points: usize,
    pub noise_rate: f64,
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
    /// All points coincide; indices are missing.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// Renumber clusters by first appearance; noise stays -1.
pub fn canonical_labels(labels: &[i64]) -> Vec<i64> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

fn cmp_rows(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Cluster the rows of `m` as given (no reduction or normalization).
///
/// Rows are processed in lexicographic order, so permuting the input only
/// permutes the labels.
pub fn run_clustering(m: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<ClusterRunResult, ClusteringError> {
    cfg.algorithm.validate()?;
    let need = cfg.algorithm.min_items();
    if m.len() < need {
        return Err(ClusteringError::TooFewItems { need, got: m.len() });
    }
    let degenerate = m.rows().all(|r| r == m.row(0));
    let raw: Vec<i64> = if degenerate {
        vec![0; m.len()]
    } else {
        // cluster rows in a canonical order so the input order cannot matter
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| cmp_rows(m.row(a), m.row(b)));
        let sorted = m.select(&order);
        let as_i64 = |v: Vec<usize>| v.into_iter().map(|l| l as i64).collect();
        let sorted_labels: Vec<i64> = match cfg.algorithm {
            Algorithm::Kmeans { k } => as_i64(kmeans(&sorted, k, cfg.seed).labels),
            Algorithm::Agglomerative { k } => as_i64(ward(&sorted, k)),
            Algorithm::Spectral { k, n_neighbors } => as_i64(spectral::spectral(&sorted, k, n_neighbors, cfg.seed)),
            Algorithm::Gmm { k } => as_i64(gmm(&sorted, k, cfg.seed)),
            Algorithm::Dbscan { eps, min_samples } => dbscan(&sorted, eps, min_samples),
            Algorithm::Hdbscan { min_cluster_size, min_samples } => hdbscan(&sorted, min_cluster_size, min_samples),
        };
        let mut raw = vec![0; m.len()];
        for (pos, &orig) in order.iter().enumerate() {
            raw[orig] = sorted_labels[pos];
        }
        raw
    };
    let labels = canonical_labels(&raw);
    let noise_points = labels.iter().filter(|&&l| l < 0).count();
    let n_clusters = labels.iter().filter(|&&l| l >= 0).collect::<BTreeSet<_>>().len();
    let scores = if degenerate { InternalScores::default() } else { score_internal(m, &labels) };
    Ok(ClusterRunResult {
        config: cfg.clone(),
        keys: m.keys().to_vec(),
        noise_rate: noise_points as f64 / m.len() as f64,
        labels,
        n_clusters,
        noise_points,
        silhouette: scores.silhouette,
        dbi: scores.dbi,
        chi: scores.chi,
        degenerate,
    })
}

/// Embedding inputs for the coded utterances that have a code, keyed by
/// utterance id.
pub fn item_texts(coded: &[CodedUtterance]) -> Vec<(String, String)> {
    coded
        .iter()
        .filter_map(|c| c.code().map(|code| (c.utterance_id.clone(), format!("{code}{ITEM_SEPARATOR}{}", c.text))))
        .collect()
}

pub fn embed_items(coded: &[CodedUtterance], provider: &dyn EmbeddingProvider) -> Result<EmbeddingMatrix, ClusteringError> {
    let (keys, texts): (Vec<String>, Vec<String>) = item_texts(coded).into_iter().unzip();
    Ok(embed_keyed(provider, keys, &texts)?)
}

/// Reduce and, if configured, normalize raw embeddings for one config.
pub fn prepare(m: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<EmbeddingMatrix, EmbeddingError> {
    let reduced = reduce(m, &cfg.reduction)?;
    Ok(if cfg.normalize { reduced.normalized() } else { reduced })
}

/// Reduce, normalize and cluster.
pub fn run_config(raw: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<ClusterRunResult, ClusteringError> {
    run_clustering(&prepare(raw, cfg)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub config: ClusteringConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub ranked: Vec<ClusterRunResult>,
    pub skipped: Vec<SkippedConfig>,
    pub failed: Vec<SkippedConfig>,
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub embedding: String,
    pub reduction: String,
    pub algo: String,
    pub params: String,
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
    pub clusters: usize,
    pub noise_rate: f64,
}

impl SweepReport {
    pub fn best(&self) -> Option<&ClusterRunResult> {
        self.ranked.first()
    }

    pub fn table(&self) -> Vec<SweepRow> {
        self.ranked
            .iter()
            .map(|r| SweepRow {
                embedding: r.config.embedder.clone(),
                reduction: r.config.reduction.label(),
                algo: r.config.algorithm.name().into(),
                params: r.config.algorithm.param_string(),
                silhouette: r.silhouette,
                dbi: r.dbi,
                chi: r.chi,
                clusters: r.n_clusters,
                noise_rate: r.noise_rate,
            })
            .collect()
    }
}

/// Missing values sort after present ones.
fn cmp_opt(a: Option<f64>, b: Option<f64>, descending: bool) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    match (a, b) {
        (Some(x), Some(y)) => {
            if descending {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            }
        }
        (Some(_), None) => Less,
        (None, Some(_)) => Greater,
        (None, None) => Equal,
    }
}

/// Ranking order: silhouette descending, then DBI ascending, then CHI
/// descending; missing values last.
pub fn rank_order(a: &ClusterRunResult, b: &ClusterRunResult) -> std::cmp::Ordering {
    cmp_opt(a.silhouette, b.silhouette, true)
        .then_with(|| cmp_opt(a.dbi, b.dbi, false))
        .then_with(|| cmp_opt(a.chi, b.chi, true))
}

/// Run every config against the embeddings of its embedder, in parallel.
pub fn sweep(embeddings: &BTreeMap<String, EmbeddingMatrix>, grid: &[ClusteringConfig]) -> SweepReport {
    let outcomes: Vec<Result<ClusterRunResult, ClusteringError>> = grid
        .par_iter()
        .map(|cfg| {
            let raw = embeddings.get(&cfg.embedder).ok_or_else(|| ClusteringError::UnknownEmbedder(cfg.embedder.clone()))?;
            run_config(raw, cfg)
        })
        .collect();
    let mut report = SweepReport { ranked: Vec::new(), skipped: Vec::new(), failed: Vec::new() };
    for (cfg, outcome) in grid.iter().zip(outcomes) {
        match outcome {
            Ok(r) => report.ranked.push(r),
            Err(ClusteringError::Embedding(e @ EmbeddingError::ReducerUnavailable(_))) => {
                report.skipped.push(SkippedConfig { config: cfg.clone(), reason: e.to_string() })
            }
            Err(e) => {
                tracing::warn!(config = %cfg.label(), error = %e, "sweep config failed");
                report.failed.push(SkippedConfig { config: cfg.clone(), reason: e.to_string() });
            }
        }
    }
    report.ranked.sort_by(rank_order);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingOptions {
    /// Member codes shown to the labeler, most frequent first.
    pub sample_size: usize,
    /// Also show a few member utterances.
    pub include_snippets: bool,
    pub snippets: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for LabelingOptions {
    fn default() -> Self {
        Self { sample_size: 30, include_snippets: false, snippets: 5, temperature: 0.0, seed: None }
    }
}

/// Codes by descending frequency, ties alphabetical.
fn codes_by_frequency<'a>(codes: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c).or_default() += 1;
    }
    let mut v: Vec<(&str, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(c, _)| c.to_string()).collect()
}

/// Name each cluster of `run` and turn it into a category system.
///
/// Noise points and coded utterances missing from the run are unassigned.
pub fn label_clusters(
    run: &ClusterRunResult,
    coded: &[CodedUtterance],
    labeler: &dyn ChatBackend,
    templates: &PromptTemplates,
    opts: &LabelingOptions,
) -> Result<CategorySystem, ClusteringError> {
    if run.labels.len() != run.keys.len() {
        return Err(ClusteringError::LengthMismatch { labels: run.labels.len(), items: run.keys.len() });
    }
    if run.n_clusters == 0 {
        return Err(ClusteringError::NoClusters);
    }
    let by_id: HashMap<&str, &CodedUtterance> = coded.iter().map(|c| (c.utterance_id.as_str(), c)).collect();
    let mut members: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
    for (key, &l) in run.keys.iter().zip(&run.labels) {
        if l >= 0 {
            members.entry(l).or_default().push(key);
        }
    }

    let mut system = CategorySystem::new(format!("cluster:{}", run.config.algorithm.name()));
    system.params = run.config.algorithm.params();
    system.params.insert("embedder".into(), run.config.embedder.clone().into());
    system.params.insert("reduction".into(), run.config.reduction.label().into());
    for (cluster, ids) in &members {
        let codes = codes_by_frequency(ids.iter().filter_map(|id| by_id.get(id).and_then(|c| c.code())));
        let sample: Vec<String> = codes.iter().take(opts.sample_size).cloned().collect();
        let snippets: Vec<String> = if opts.include_snippets {
            ids.iter().filter_map(|id| by_id.get(id)).take(opts.snippets).map(|c| c.text.clone()).collect()
        } else {
            Vec::new()
        };
        let request = ChatRequest {
            messages: templates.labeler_messages(&sample, &snippets),
            temperature: opts.temperature,
            seed: opts.seed,
            task: Task::NameCluster { codes: sample.clone(), snippets: snippets.clone() },
        };
        let named = match labeler.complete(&request) {
            Ok(raw) => clean_label(&raw, MAX_LABEL_WORDS),
            Err(e) => {
                tracing::warn!(cluster, error = %e, "labeler failed; using most frequent code");
                None
            }
        };
        let (label, fallback, truncated) = match named {
            Some(l) => (l.text, false, l.truncated),
            None => {
                let fallback = clean_label(sample.first().map_or("unnamed", String::as_str), MAX_LABEL_WORDS).expect("non-empty");
                (fallback.text, true, fallback.truncated)
            }
        };
        let id = format!("c{}", system.categories.len());
        system.provenance.push(Provenance::Named { category: id.clone(), label: label.clone(), fallback, truncated });
        system.categories.push(Category {
            id,
            label,
            member_codes: codes.into_iter().collect(),
            member_utterances: ids.iter().map(|s| s.to_string()).collect(),
        });
    }
    let assigned: BTreeSet<&str> = members.values().flatten().copied().collect();
    let everyone: BTreeSet<&str> = run.keys.iter().map(String::as_str).chain(coded.iter().map(|c| c.utterance_id.as_str())).collect();
    system.unassigned = everyone.into_iter().filter(|id| !assigned.contains(id)).map(str::to_string).collect();
    Ok(system)
}

#[cfg(test)]
mod tests;
