//! Text embeddings behind a provider contract.
//!
//! Every stage that needs vectors goes through [`EmbeddingProvider`]. The
//! built-in [`TestHashProvider`] is deterministic and offline; real sentence
//! encoders are reached through [`HttpEmbeddingProvider`]. Wrap any provider
//! in [`CachedProvider`] to persist vectors on disk.

mod cache;
mod hash;
mod http;
mod reduce;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CachedProvider};
pub use hash::{TestHashProvider, TestHashTokens};
pub use http::{HttpEmbeddingProvider, HttpEmbeddingConfig};
pub use reduce::{explained_variance, reduce, ReductionKind, ReductionSpec};

/// Tolerance used when comparing a similarity against a threshold.
///
/// Similarities of normalized vectors carry a few ulps of rounding noise, so
/// a value within this distance of the threshold counts as equal to it.
pub const SIMILARITY_EPS: f64 = 1e-9;

/// Strict comparison: `sim` exceeds `threshold`.
pub fn exceeds(sim: f64, threshold: f64) -> bool {
    sim > threshold + SIMILARITY_EPS
}

/// Inclusive comparison: `sim` reaches `threshold`.
pub fn reaches(sim: f64, threshold: f64) -> bool {
    sim >= threshold - SIMILARITY_EPS
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text (item {0})")]
    EmptyText(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("provider `{provider}` returned {got} vectors for {expected} texts")]
    CountMismatch { provider: String, expected: usize, got: usize },
    #[error("provider `{provider}` returned a non-finite or wrongly sized vector")]
    BadVector { provider: String },
    #[error("provider `{provider}` failed after {attempts} attempt(s): {message}")]
    Provider { provider: String, attempts: usize, message: String },
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("reducer `{0}` is not available in this build")]
    ReducerUnavailable(&'static str),
    #[error("invalid reduction: {0}")]
    InvalidReduction(String),
}

/// Source of sentence-level vectors.
///
/// Implementations must be deterministic (same text, same vector) and return
/// exactly `dimension()` finite components per text.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        (**self).embed_batch(texts)
    }
}

/// Per-token contextual vectors, used by BERTScore.
pub trait TokenEmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Row-per-key real matrix. Rows are finite and all the same width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    keys: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(keys: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        if keys.len() != rows.len() {
            return Err(EmbeddingError::CountMismatch {
                provider: "matrix".into(),
                expected: keys.len(),
                got: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(EmbeddingError::DimensionMismatch { left: dim, right: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::BadVector { provider: "matrix".into() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { keys, dim, data })
    }

    /// Build from rows with keys `"0"`, `"1"`, ...
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        let keys = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(keys, rows)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Scale every non-zero row to unit L2 norm.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.len() {
            let row = &mut out.data[i * out.dim..(i + 1) * out.dim];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        out
    }

    /// Rows selected by index, keeping keys.
    pub fn select(&self, indices: &[usize]) -> Self {
        let keys = indices.iter().map(|&i| self.keys[i].clone()).collect();
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { keys, dim: self.dim, data }
    }
}

/// Embed `texts` in order; keys are the texts themselves.
pub fn embed_texts<P: EmbeddingProvider + ?Sized>(provider: &P, texts: &[String]) -> Result<EmbeddingMatrix, EmbeddingError> {
    embed_keyed(provider, texts.to_vec(), texts)
}

/// Embed `texts` in order under caller-chosen keys.
pub fn embed_keyed<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    keys: Vec<String>,
    texts: &[String],
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText(i));
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let rows = if refs.is_empty() { Vec::new() } else { provider.embed_batch(&refs)? };
    check_vectors(provider.name(), provider.dimension(), texts.len(), &rows)?;
    let mut m = EmbeddingMatrix::new(keys, rows)?;
    if m.is_empty() {
        m.dim = provider.dimension();
    }
    Ok(m)
}

pub(crate) fn check_vectors(name: &str, dim: usize, expected: usize, rows: &[Vec<f64>]) -> Result<(), EmbeddingError> {
    if rows.len() != expected {
        return Err(EmbeddingError::CountMismatch { provider: name.into(), expected, got: rows.len() });
    }
    if rows.iter().any(|r| r.len() != dim || r.iter().any(|x| !x.is_finite())) {
        return Err(EmbeddingError::BadVector { provider: name.into() });
    }
    Ok(())
}

/// Cosine of the angle between two non-zero vectors, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Euclidean distance.
pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    squared_euclidean(u, v).sqrt()
}

pub fn squared_euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}
