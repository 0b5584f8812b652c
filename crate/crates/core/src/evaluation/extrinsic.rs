use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexical::{bertscore_f1, rouge};
use super::EvalError;
use crate::category::CategorySystem;
use crate::corpus::{Corpus, Utterance};
use crate::embedding::{cosine_similarity, EmbeddingProvider, TokenEmbeddingProvider};
use crate::text::normalize_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Domain,
    Subtopic,
}

impl Level {
    pub fn gold<'u>(&self, u: &'u Utterance) -> Option<&'u str> {
        match self {
            Self::Domain => u.domain_label.as_deref(),
            Self::Subtopic => u.subtopic_label.as_deref(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Domain => "domain",
            Self::Subtopic => "subtopic",
        }
    }
}

/// How per-utterance scores are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    PerUtterance,
    /// Mean within each category first, then over categories.
    PerCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub cosine: f64,
    /// Missing when no token-embedding provider is configured.
    pub bertscore_f1: Option<f64>,
    /// Assigned utterances with a gold label that were scored.
    pub scored: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicReport {
    pub domain: Option<LevelScores>,
    pub subtopic: Option<LevelScores>,
}

impl ExtrinsicReport {
    pub fn get(&self, level: Level) -> Option<&LevelScores> {
        match level {
            Level::Domain => self.domain.as_ref(),
            Level::Subtopic => self.subtopic.as_ref(),
        }
    }
}

pub struct ExtrinsicProviders<'a> {
    pub sentence: &'a dyn EmbeddingProvider,
    pub tokens: Option<&'a dyn TokenEmbeddingProvider>,
}

#[derive(Clone, Copy)]
struct PairScore {
    r1: f64,
    r2: f64,
    rl: f64,
    cos: f64,
    bert: Option<f64>,
}

fn embed_one(p: &dyn EmbeddingProvider, text: &str, cache: &mut HashMap<String, Vec<f64>>) -> Result<Vec<f64>, EvalError> {
    let key = normalize_label(text);
    if let Some(v) = cache.get(&key) {
        return Ok(v.clone());
    }
    let v = p.embed_batch(&[key.as_str()])?.pop().ok_or(EvalError::NothingToScore)?;
    cache.insert(key, v.clone());
    Ok(v)
}

/// Compare each assigned utterance's category label with its gold label.
///
/// Unassigned utterances and those without a gold label are not scored.
/// Cosine and BERTScore are clipped at 0 per pair so every mean stays in
/// [0, 1]. If the token provider fails, BERTScore is reported missing.
pub fn extrinsic_eval(
    system: &CategorySystem,
    corpus: &Corpus,
    level: Level,
    providers: &ExtrinsicProviders<'_>,
    averaging: Averaging,
) -> Result<LevelScores, EvalError> {
    if corpus.utterances().iter().all(|u| level.gold(u).is_none()) {
        return Err(EvalError::NoGoldLabels(level.name()));
    }
    let mut pair_cache: HashMap<(String, String), PairScore> = HashMap::new();
    let mut vec_cache = HashMap::new();
    let mut per_category: Vec<Vec<PairScore>> = Vec::new();
    let mut tokens = providers.tokens;
    for c in &system.categories {
        let mut scores = Vec::new();
        for id in &c.member_utterances {
            let u = corpus.get(id).ok_or_else(|| EvalError::ForeignId(id.clone()))?;
            let Some(gold) = level.gold(u) else { continue };
            let key = (c.label.clone(), gold.to_string());
            let s = match pair_cache.get(&key) {
                Some(s) => *s,
                None => {
                    let r = rouge(&c.label, gold);
                    let a = embed_one(providers.sentence, &c.label, &mut vec_cache)?;
                    let b = embed_one(providers.sentence, gold, &mut vec_cache)?;
                    let cos = cosine_similarity(&a, &b)?.max(0.0);
                    let bert = match tokens.map(|t| bertscore_f1(&c.label, gold, t)) {
                        Some(Ok(b)) => Some(b.clamp(0.0, 1.0)),
                        Some(Err(e)) => {
                            tracing::warn!(error = %e, "token embeddings unavailable; BERTScore reported missing");
                            tokens = None;
                            None
                        }
                        None => None,
                    };
                    let s = PairScore { r1: r.r1, r2: r.r2, rl: r.rl, cos, bert };
                    pair_cache.insert(key, s);
                    s
                }
            };
            scores.push(s);
        }
        if !scores.is_empty() {
            per_category.push(scores);
        }
    }
    let scored: usize = per_category.iter().map(Vec::len).sum();
    if scored == 0 {
        return Err(EvalError::NothingToScore);
    }
    let units: Vec<PairScore> = match averaging {
        Averaging::PerUtterance => per_category.into_iter().flatten().collect(),
        Averaging::PerCategory => per_category
            .iter()
            .map(|s| {
                let n = s.len() as f64;
                PairScore {
                    r1: s.iter().map(|x| x.r1).sum::<f64>() / n,
                    r2: s.iter().map(|x| x.r2).sum::<f64>() / n,
                    rl: s.iter().map(|x| x.rl).sum::<f64>() / n,
                    cos: s.iter().map(|x| x.cos).sum::<f64>() / n,
                    bert: s.iter().map(|x| x.bert).sum::<Option<f64>>().map(|b| b / n),
                }
            })
            .collect(),
    };
    let n = units.len() as f64;
    let bert_complete = tokens.is_some();
    let mean = |f: fn(&PairScore) -> f64| units.iter().map(f).sum::<f64>() / n;
    Ok(LevelScores {
        rouge1: mean(|s| s.r1),
        rouge2: mean(|s| s.r2),
        rouge_l: mean(|s| s.rl),
        cosine: mean(|s| s.cos),
        bertscore_f1: if bert_complete { units.iter().map(|s| s.bert).sum::<Option<f64>>().map(|b| b / n) } else { None },
        scored,
    })
}
