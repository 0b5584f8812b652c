//! Pipeline configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axcode::axial_clustering::{Algorithm, LabelingOptions};
use axcode::axial_llm::{BatchSize, MergePolicy};
use axcode::backend::{build_backend, BackendSpec, ChatBackend, PromptTemplates};
use axcode::corpus::CorpusFormat;
use axcode::embedding::{
    CachedProvider, EmbeddingProvider, HttpEmbeddingConfig, HttpEmbeddingProvider, ReductionSpec, TestHashProvider,
    TestHashTokens, TokenEmbeddingProvider,
};
use axcode::evaluation::{Averaging, CoherenceOptions};
use axcode::http::HttpSettings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub embedders: BTreeMap<String, EmbedderSpec>,
    #[serde(default)]
    pub token_embedder: Option<TokenEmbedderSpec>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
    pub open_coding: OpenCodingSection,
    #[serde(default)]
    pub clustering: Option<ClusteringSection>,
    #[serde(default)]
    pub llm: Option<LlmSection>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

/// A sentence embedder. `test-hash` is built in; `http` calls a remote encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbedderSpec {
    TestHash {
        #[serde(default = "default_dim")]
        dimension: usize,
    },
    Http {
        endpoint: String,
        model: String,
        dimension: usize,
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_embed_batch")]
        batch_size: usize,
        /// Keep vectors on disk under `<out_dir>/cache/<name>`.
        #[serde(default)]
        cache: bool,
    },
}

fn default_dim() -> usize {
    384
}

fn default_embed_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TokenEmbedderSpec {
    TestHashTokens {
        #[serde(default = "default_dim")]
        dimension: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenCodingSection {
    pub coders: Vec<String>,
    pub moderator: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_embedder_name")]
    pub embedder: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_tau() -> f64 {
    0.7
}

fn default_embedder_name() -> String {
    "test-hash".into()
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    #[serde(default = "default_embedders")]
    pub embedders: Vec<String>,
    /// `none`, `pca-<d>` or `umap-<d>`.
    #[serde(default = "default_reductions")]
    pub reductions: Vec<String>,
    /// Explicit grid; the standard grid is used when empty.
    #[serde(default)]
    pub grid: Vec<Algorithm>,
    /// Cluster with this algorithm instead of the sweep winner.
    #[serde(default)]
    pub fixed: Option<Algorithm>,
    #[serde(default)]
    pub fixed_embedder: Option<String>,
    #[serde(default)]
    pub fixed_reduction: Option<String>,
    pub labeler: String,
    #[serde(default)]
    pub labeling: LabelingOptions,
}

fn default_embedders() -> Vec<String> {
    vec![default_embedder_name()]
}

fn default_reductions() -> Vec<String> {
    vec!["none".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub groupers: Vec<String>,
    /// Also pool all groupers' categories into one system.
    #[serde(default)]
    pub combined: bool,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default)]
    pub policy: MergePolicy,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Extra aggregate levels above the first; export only.
    #[serde(default)]
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub embedder: String,
    pub coherence: CoherenceOptions,
    pub averaging: Averaging,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { embedder: default_embedder_name(), coherence: CoherenceOptions::default(), averaging: Averaging::default() }
    }
}

/// Parse `none`, `pca-<d>`, `umap-<d>`.
pub fn parse_reduction(s: &str, seed: u64) -> Option<ReductionSpec> {
    let s = s.to_ascii_lowercase();
    if s == "none" {
        return Some(ReductionSpec::none());
    }
    if s == "pca" {
        return Some(ReductionSpec::pca_default());
    }
    if s == "umap" {
        return Some(ReductionSpec::umap_default(seed));
    }
    let (kind, dim) = s.split_once('-')?;
    let dim: usize = dim.parse().ok().filter(|d| *d > 0)?;
    match kind {
        "pca" => Some(ReductionSpec::pca(dim)),
        "umap" => Some(ReductionSpec { target_dim: dim, ..ReductionSpec::umap_default(seed) }),
        _ => None,
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        // Relative paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut cfg.corpus.path), Some(&mut cfg.out_dir), cfg.prompts_dir.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-reference checks, reported with the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: String, msg: String| Err(CliError::Validation(format!("{path}: {msg}")));
        let backend = |path: String, name: &str| {
            if self.backends.contains_key(name) {
                Ok(())
            } else {
                bad(path, format!("backend `{name}` is not declared under [backends]"))
            }
        };
        let embedder = |path: String, name: &str| {
            if name == "test-hash" || self.embedders.contains_key(name) {
                Ok(())
            } else {
                bad(path, format!("embedder `{name}` is not declared under [embedders]"))
            }
        };
        if self.open_coding.coders.is_empty() {
            return bad("open_coding.coders".into(), "at least one coder is required".into());
        }
        for (i, c) in self.open_coding.coders.iter().enumerate() {
            backend(format!("open_coding.coders[{i}]"), c)?;
        }
        backend("open_coding.moderator".into(), &self.open_coding.moderator)?;
        embedder("open_coding.embedder".into(), &self.open_coding.embedder)?;
        if !(self.open_coding.tau > 0.0 && self.open_coding.tau < 1.0) {
            return bad("open_coding.tau".into(), format!("must lie strictly between 0 and 1, got {}", self.open_coding.tau));
        }
        if let Some(c) = &self.clustering {
            backend("clustering.labeler".into(), &c.labeler)?;
            for (i, e) in c.embedders.iter().enumerate() {
                embedder(format!("clustering.embedders[{i}]"), e)?;
            }
            for (i, r) in c.reductions.iter().chain(&c.fixed_reduction).enumerate() {
                if parse_reduction(r, self.seed).is_none() {
                    return bad(format!("clustering.reductions[{i}]"), format!("unknown reduction `{r}`"));
                }
            }
            for (i, a) in c.grid.iter().chain(&c.fixed).enumerate() {
                a.validate().or_else(|e| bad(format!("clustering.grid[{i}]"), e.to_string()))?;
            }
            if let Some(e) = &c.fixed_embedder {
                embedder("clustering.fixed_embedder".into(), e)?;
            }
        }
        if let Some(l) = &self.llm {
            if l.groupers.is_empty() {
                return bad("llm.groupers".into(), "at least one grouper is required".into());
            }
            for (i, g) in l.groupers.iter().enumerate() {
                backend(format!("llm.groupers[{i}]"), g)?;
            }
            embedder("llm.policy.label_embedder".into(), &l.policy.label_embedder)?;
            l.policy.validate().or_else(|e| bad("llm.policy".into(), e.to_string()))?;
        }
        embedder("evaluation.embedder".into(), &self.evaluation.embedder)?;
        for (name, spec) in &self.backends {
            if let Some(t) = spec.temperature {
                if !(0.0..=2.0).contains(&t) {
                    return bad(format!("backends.{name}.temperature"), format!("out of range: {t}"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without the output directory.
    /// The corpus and prompt directory enter by content, not by path, so a
    /// run directory can move without going stale.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out_dir");
            let corpus = match std::fs::read(&self.corpus.path) {
                Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
                Err(_) => self.corpus.path.display().to_string(),
            };
            o["corpus"]["path"] = corpus.into();
            if self.prompts_dir.is_some() {
                let t = self.templates().unwrap_or_default();
                let joined = [t.coder, t.moderator, t.grouper, t.repair, t.labeler].join("\0");
                o.insert("prompts_dir".into(), hex::encode(Sha256::digest(joined.as_bytes())).into());
            }
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("value serializes")))
    }

    pub fn templates(&self) -> Result<PromptTemplates, CliError> {
        match &self.prompts_dir {
            Some(d) => PromptTemplates::load_overrides(d).map_err(|e| CliError::Validation(format!("prompts_dir: {e}"))),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn backend(&self, name: &str) -> Result<Arc<dyn ChatBackend>, CliError> {
        let spec = self
            .backends
            .get(name)
            .ok_or_else(|| CliError::Validation(format!("backend `{name}` is not declared under [backends]")))?;
        build_backend(name, spec).map_err(|e| CliError::Validation(format!("backends.{name}: {e}")))
    }

    pub fn embedder(&self, name: &str) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
        let spec = match self.embedders.get(name) {
            Some(s) => s.clone(),
            None if name == "test-hash" => EmbedderSpec::TestHash { dimension: default_dim() },
            None => return Err(CliError::Validation(format!("embedder `{name}` is not declared under [embedders]"))),
        };
        Ok(match spec {
            EmbedderSpec::TestHash { dimension } => Arc::new(CachedProvider::in_memory(TestHashProvider::new(dimension))),
            EmbedderSpec::Http { endpoint, model, dimension, token_env, batch_size, cache } => {
                let mut http = HttpSettings::new(endpoint);
                http.token_env = token_env;
                let inner = HttpEmbeddingProvider::new(HttpEmbeddingConfig { http, model, dimension, batch_size });
                if cache {
                    Arc::new(
                        CachedProvider::with_dir(inner, self.out_dir.join("cache").join(name))
                            .map_err(|e| CliError::Backend(e.to_string()))?,
                    )
                } else {
                    Arc::new(CachedProvider::in_memory(inner))
                }
            }
        })
    }

    pub fn token_embedder(&self) -> Option<Box<dyn TokenEmbeddingProvider>> {
        self.token_embedder.as_ref().map(|t| match t {
            TokenEmbedderSpec::TestHashTokens { dimension } => {
                Box::new(TestHashTokens::new(*dimension)) as Box<dyn TokenEmbeddingProvider>
            }
        })
    }
}
