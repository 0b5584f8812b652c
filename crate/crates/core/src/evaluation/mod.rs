//! Scoring of category systems.
//!
//! Intrinsic metrics look only at the system and utterance embeddings:
//! coverage, label brevity, within-category coherence, the singleton share
//! and the distance of the size profile to the consensus of all systems.
//! Extrinsic metrics compare category labels with the gold domain and
//! subtopic labels of each assigned utterance.

mod extrinsic;
mod intrinsic;
mod lexical;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::CategorySystem;
use crate::corpus::Corpus;
use crate::embedding::{EmbeddingError, EmbeddingMatrix};

pub use extrinsic::{extrinsic_eval, Averaging, ExtrinsicProviders, ExtrinsicReport, Level, LevelScores};
pub use intrinsic::{
    brevity, build_acs, coherence, coverage, coverage_from_counts, divergence, js_distance, novelty, size_profile,
    AggregatedCodeSpace, CoherenceOptions,
};
pub use lexical::{bertscore_f1, rouge, rouge_l, rouge_n, Rouge};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("utterance `{0}` is not in the corpus")]
    ForeignId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("system `{0}` has no categories")]
    EmptySystem(String),
    #[error("no embedding for utterance `{0}`")]
    MissingEmbedding(String),
    #[error("corpus has no {0} gold labels")]
    NoGoldLabels(&'static str),
    #[error("the aggregated code space needs at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("no assigned utterance has a gold label")]
    NothingToScore,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub coverage: f64,
    pub n_categories: usize,
    pub brevity: f64,
    pub coherence: f64,
    pub novelty: f64,
    /// Present once the aggregated code space has been built.
    pub divergence: Option<f64>,
}

/// Everything known about one system, ready for the comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system: String,
    pub method: String,
    pub intrinsic: IntrinsicReport,
    pub extrinsic: ExtrinsicReport,
}

impl MetricReport {
    /// `llm` for direct grouping, `cluster` for embedding clustering.
    pub fn kind(&self) -> &str {
        self.method.split(':').next().unwrap_or("")
    }
}

/// Intrinsic scores. Divergence is filled in when `acs` is given.
pub fn intrinsic_eval(
    system: &CategorySystem,
    corpus_ids: &BTreeSet<String>,
    embeddings: &EmbeddingMatrix,
    opts: &CoherenceOptions,
    acs: Option<&AggregatedCodeSpace>,
) -> Result<IntrinsicReport, EvalError> {
    Ok(IntrinsicReport {
        coverage: coverage(system, corpus_ids)?,
        n_categories: system.categories.len(),
        brevity: brevity(system)?,
        coherence: coherence(system, embeddings, opts)?,
        novelty: novelty(system)?,
        divergence: acs.map(|a| divergence(system, a)).transpose()?,
    })
}

/// Extrinsic scores at both levels. A level without gold labels is left out.
pub fn extrinsic_both(
    system: &CategorySystem,
    corpus: &Corpus,
    providers: &ExtrinsicProviders<'_>,
    averaging: Averaging,
) -> Result<ExtrinsicReport, EvalError> {
    let level = |l: Level| match extrinsic_eval(system, corpus, l, providers, averaging) {
        Ok(s) => Ok(Some(s)),
        Err(EvalError::NoGoldLabels(_) | EvalError::NothingToScore) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(ExtrinsicReport { domain: level(Level::Domain)?, subtopic: level(Level::Subtopic)? })
}

/// Score several systems together; the consensus profile is built from all
/// of them when there are at least two.
pub fn evaluate_systems(
    systems: &[&CategorySystem],
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    providers: &ExtrinsicProviders<'_>,
    opts: &CoherenceOptions,
    averaging: Averaging,
) -> Result<Vec<MetricReport>, EvalError> {
    let ids: BTreeSet<String> = corpus.ids().map(str::to_string).collect();
    let acs = if systems.len() >= 2 { Some(build_acs(systems)?) } else { None };
    systems
        .iter()
        .map(|s| {
            Ok(MetricReport {
                system: s.display_name(),
                method: s.method.clone(),
                intrinsic: intrinsic_eval(s, &ids, embeddings, opts, acs.as_ref())?,
                extrinsic: extrinsic_both(s, corpus, providers, averaging)?,
            })
        })
        .collect()
}
