use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingError, TokenEmbeddingProvider};
use crate::text::alnum_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

fn f1(overlap: usize, cand: usize, refr: usize) -> f64 {
    if overlap == 0 || cand == 0 || refr == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / refr as f64;
    2.0 * p * r / (p + r)
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// ROUGE-N F1 with clipped n-gram counts.
pub fn rouge_n(cand: &[String], refr: &[String], n: usize) -> f64 {
    let (c, r) = (ngrams(cand, n), ngrams(refr, n));
    let overlap = c.iter().map(|(g, k)| (*k).min(*r.get(g).unwrap_or(&0))).sum();
    f1(overlap, cand.len().saturating_sub(n - 1), refr.len().saturating_sub(n - 1))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l(cand: &[String], refr: &[String]) -> f64 {
    f1(lcs_len(cand, refr), cand.len(), refr.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 over lowercased alphanumeric tokens.
pub fn rouge(candidate: &str, reference: &str) -> Rouge {
    let (c, r) = (alnum_tokens(candidate), alnum_tokens(reference));
    Rouge { r1: rouge_n(&c, &r, 1), r2: rouge_n(&c, &r, 2), rl: rouge_l(&c, &r) }
}

fn greedy(from: &[Vec<f64>], to: &[Vec<f64>]) -> Result<f64, EmbeddingError> {
    let mut sum = 0.0;
    for a in from {
        let mut best = f64::NEG_INFINITY;
        for b in to {
            best = best.max(cosine_similarity(a, b)?);
        }
        sum += best;
    }
    Ok(sum / from.len() as f64)
}

/// BERTScore F1 without baseline rescaling: each token is matched to its most
/// similar token on the other side.
pub fn bertscore_f1(candidate: &str, reference: &str, provider: &dyn TokenEmbeddingProvider) -> Result<f64, EmbeddingError> {
    let c = provider.embed_tokens(candidate)?;
    let r = provider.embed_tokens(reference)?;
    if c.is_empty() || r.is_empty() {
        return Ok(0.0);
    }
    let p = greedy(&c, &r)?;
    let rec = greedy(&r, &c)?;
    Ok(if p + rec > 0.0 { 2.0 * p * rec / (p + rec) } else { 0.0 })
}
