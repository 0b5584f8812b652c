use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::category::CategorySystem;
use crate::embedding::{cosine_similarity, EmbeddingMatrix};
use crate::text::word_count;

/// Assigned fraction from raw counts.
pub fn coverage_from_counts(assigned: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        assigned as f64 / total as f64
    }
}

/// Fraction of corpus utterances placed in a category.
pub fn coverage(system: &CategorySystem, corpus_ids: &BTreeSet<String>) -> Result<f64, EvalError> {
    if corpus_ids.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut assigned = 0;
    for c in &system.categories {
        for u in &c.member_utterances {
            if !corpus_ids.contains(u) {
                return Err(EvalError::ForeignId(u.clone()));
            }
            assigned += 1;
        }
    }
    Ok(coverage_from_counts(assigned, corpus_ids.len()))
}

fn nonempty(system: &CategorySystem) -> Result<(), EvalError> {
    if system.categories.is_empty() {
        Err(EvalError::EmptySystem(system.method.clone()))
    } else {
        Ok(())
    }
}

/// Mean word count of category labels.
pub fn brevity(system: &CategorySystem) -> Result<f64, EvalError> {
    nonempty(system)?;
    let words: usize = system.categories.iter().map(|c| word_count(&c.label)).sum();
    Ok(words as f64 / system.categories.len() as f64)
}

/// Share of categories with exactly one member utterance.
pub fn novelty(system: &CategorySystem) -> Result<f64, EvalError> {
    nonempty(system)?;
    let singletons = system.categories.iter().filter(|c| c.size() == 1).count();
    Ok(singletons as f64 / system.categories.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceOptions {
    /// Pairs scored per category before random subsampling kicks in.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        Self { max_pairs: 20_000, seed: 0 }
    }
}

/// Size-weighted mean over categories of the mean pairwise cosine between
/// member utterances. A single-member category counts as 1.
pub fn coherence(system: &CategorySystem, embeddings: &EmbeddingMatrix, opts: &CoherenceOptions) -> Result<f64, EvalError> {
    nonempty(system)?;
    let index: HashMap<&str, usize> = embeddings.keys().iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (ci, c) in system.categories.iter().enumerate() {
        let rows: Vec<&[f64]> = c
            .member_utterances
            .iter()
            .map(|u| index.get(u.as_str()).map(|&i| embeddings.row(i)).ok_or_else(|| EvalError::MissingEmbedding(u.clone())))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        let value = if n < 2 {
            1.0
        } else {
            let all_pairs = n * (n - 1) / 2;
            let mut sum = 0.0;
            let mut count = 0usize;
            if all_pairs <= opts.max_pairs {
                for i in 0..n {
                    for j in i + 1..n {
                        sum += cosine_similarity(rows[i], rows[j])?;
                        count += 1;
                    }
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(ci as u64));
                while count < opts.max_pairs {
                    let i = rng.random_range(0..n);
                    let j = rng.random_range(0..n);
                    if i != j {
                        sum += cosine_similarity(rows[i], rows[j])?;
                        count += 1;
                    }
                }
            }
            sum / count as f64
        };
        weighted += value * n as f64;
        total += n;
    }
    Ok(weighted / total as f64)
}

/// Category sizes normalized to sum 1, largest first.
pub fn size_profile(system: &CategorySystem) -> Vec<f64> {
    let mut sizes: Vec<usize> = system.categories.iter().map(|c| c.size()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    sizes.into_iter().map(|s| s as f64 / total as f64).collect()
}

/// Consensus size profile across methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCodeSpace {
    pub distribution: Vec<f64>,
    pub systems: Vec<String>,
}

/// Mean of the sorted, zero-padded size profiles, renormalized.
/// Systems without categories are left out.
pub fn build_acs(systems: &[&CategorySystem]) -> Result<AggregatedCodeSpace, EvalError> {
    if systems.len() < 2 {
        return Err(EvalError::TooFewSystems(systems.len()));
    }
    let mut profiles = Vec::new();
    let mut names = Vec::new();
    for s in systems {
        let p = size_profile(s);
        if p.is_empty() {
            tracing::warn!(system = %s.display_name(), "system has no categories; left out of the aggregated code space");
            continue;
        }
        profiles.push(p);
        names.push(s.display_name());
    }
    if profiles.is_empty() {
        return Err(EvalError::EmptySystem("all systems".into()));
    }
    let len = profiles.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = vec![0.0; len];
    for p in &profiles {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / profiles.len() as f64;
        }
    }
    let sum: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= sum);
    Ok(AggregatedCodeSpace { distribution: mean, systems: names })
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(pi, _)| **pi > 0.0).map(|(pi, mi)| pi * (pi / mi).log2()).sum()
}

/// Jensen-Shannon distance in base 2: the square root of the divergence.
/// The shorter input is padded with zeros.
pub fn js_distance(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let pad = |v: &[f64]| {
        let mut out = v.to_vec();
        out.resize(len, 0.0);
        out
    };
    let (p, q) = (pad(p), pad(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl2(&p, &m) + 0.5 * kl2(&q, &m);
    js.max(0.0).sqrt().min(1.0)
}

/// Distance of a system's size profile to the consensus profile.
pub fn divergence(system: &CategorySystem, acs: &AggregatedCodeSpace) -> Result<f64, EvalError> {
    nonempty(system)?;
    Ok(js_distance(&size_profile(system), &acs.distribution))
}
