use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{check_vectors, EmbeddingError, EmbeddingProvider};

/// Cache key: SHA-256 over the provider name, a NUL separator and the exact
/// text bytes, hex encoded.
pub fn cache_key(provider: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(provider.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Memory + disk cache in front of another provider.
///
/// Vectors are stored as little-endian `f64` blobs named `<key>.f64` in the
/// cache directory. Reads are concurrent; writes are serialized. Misses in a
/// batch are sent to the inner provider in a single call.
pub struct CachedProvider<P> {
    inner: P,
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Vec<f64>>>,
    write_lock: Mutex<()>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    /// Memory-only cache.
    pub fn in_memory(inner: P) -> Self {
        Self { inner, dir: None, memory: RwLock::default(), write_lock: Mutex::new(()) }
    }

    pub fn with_dir(inner: P, dir: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir: Some(dir), memory: RwLock::default(), write_lock: Mutex::new(()) })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Drop the in-memory layer; the disk layer is untouched.
    pub fn clear_memory(&self) {
        self.memory.write().expect("cache lock poisoned").clear();
    }

    fn blob_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.f64"))
    }

    fn lookup(&self, key: &str) -> Result<Option<Vec<f64>>, EmbeddingError> {
        if let Some(v) = self.memory.read().expect("cache lock poisoned").get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = Self::blob_path(dir, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if bytes.len() != self.inner.dimension() * 8 {
            tracing::warn!(path = %path.display(), "ignoring cache blob with wrong size");
            return Ok(None);
        }
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.memory.write().expect("cache lock poisoned").insert(key.to_string(), v.clone());
        Ok(Some(v))
    }

    fn store(&self, key: &str, v: &[f64]) -> Result<(), EmbeddingError> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        if let Some(dir) = &self.dir {
            let path = Self::blob_path(dir, key);
            let tmp = dir.join(format!("{key}.tmp"));
            let mut f = fs::File::create(&tmp)?;
            for x in v {
                f.write_all(&x.to_le_bytes())?;
            }
            f.sync_all()?;
            fs::rename(tmp, path)?;
        }
        self.memory.write().expect("cache lock poisoned").insert(key.to_string(), v.to_vec());
        Ok(())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let name = self.inner.name().to_string();
        let keys: Vec<String> = texts.iter().map(|t| cache_key(&name, t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        let mut missing: Vec<&str> = Vec::new();
        let mut missing_keys: Vec<&str> = Vec::new();
        let mut missing_index: HashMap<&str, usize> = HashMap::new();
        for (t, k) in texts.iter().zip(&keys) {
            let hit = self.lookup(k)?;
            if hit.is_none() && !missing_index.contains_key(k.as_str()) {
                missing_index.insert(k, missing.len());
                missing.push(t);
                missing_keys.push(k);
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            check_vectors(&name, self.inner.dimension(), missing.len(), &fresh)?;
            for (k, v) in missing_keys.iter().zip(&fresh) {
                self.store(k, v)?;
            }
            for (slot, k) in out.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = Some(fresh[missing_index[k.as_str()]].clone());
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
