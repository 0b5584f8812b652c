use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingProvider, TokenEmbeddingProvider};
use crate::text::alnum_tokens;

/// Offline, deterministic sentence embedder.
///
/// Signed feature hashing: every lowercased alphanumeric token adds ±1 to
/// one bucket chosen by SHA-256, and the sum is L2-normalized. Texts with
/// no alphanumeric token hash their trimmed form as a single token.
#[derive(Debug, Clone)]
pub struct TestHashProvider {
    dimension: usize,
}

impl TestHashProvider {
    pub const NAME: &'static str = "test-hash";

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    /// Bucket index and sign a token contributes.
    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let digest = Sha256::digest(token.as_bytes());
        let mut idx = [0u8; 8];
        idx.copy_from_slice(&digest[..8]);
        let bucket = (u64::from_le_bytes(idx) % self.dimension as u64) as usize;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut tokens = alnum_tokens(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        for t in &tokens {
            let (b, s) = self.bucket(t);
            v[b] += s;
        }
        if v.iter().all(|x| *x == 0.0) {
            // every token cancelled out; fall back to the whole text
            let (b, s) = self.bucket(&tokens.join(" "));
            v[b] = s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbeddingProvider for TestHashProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| if t.trim().is_empty() { Err(EmbeddingError::EmptyText(i)) } else { Ok(self.embed(t)) })
            .collect()
    }
}

/// Offline token embedder: each token is the hashed bag of its character
/// trigrams (with boundary markers), so inflections land close together.
#[derive(Debug, Clone)]
pub struct TestHashTokens {
    inner: TestHashProvider,
}

impl TestHashTokens {
    pub fn new(dimension: usize) -> Self {
        Self { inner: TestHashProvider::new(dimension) }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let chars: Vec<char> = format!("#{token}#").chars().collect();
        let grams: Vec<String> = chars.windows(3.min(chars.len())).map(|w| w.iter().collect()).collect();
        let mut v = vec![0.0; self.inner.dimension];
        for g in grams {
            let (b, _) = self.inner.bucket(&g);
            v[b] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl TokenEmbeddingProvider for TestHashTokens {
    fn name(&self) -> &str {
        "test-hash-tokens"
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(alnum_tokens(text).iter().map(|t| self.token_vector(t)).collect())
    }
}
