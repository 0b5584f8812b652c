use serde_json::{json, Value};

use super::{check_vectors, EmbeddingError, EmbeddingProvider};
use crate::http::{self, HttpSettings};

#[derive(Debug, Clone)]
pub struct HttpEmbeddingConfig {
    pub http: HttpSettings,
    pub model: String,
    pub dimension: usize,
    pub batch_size: usize,
}

/// Remote sentence encoder.
///
/// Request body: `{"model": <model>, "input": [<text>, ...]}`. The response
/// may be a bare list of vectors, `{"embeddings": [...]}`, or the
/// `{"data": [{"embedding": [...]}, ...]}` shape.
pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Self {
        let agent = http::agent(&config.http);
        Self { config, agent }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let body = json!({ "model": self.config.model, "input": texts });
        let resp = http::post_json(&self.agent, &self.config.http, &body).map_err(|f| EmbeddingError::Provider {
            provider: self.config.model.clone(),
            attempts: f.attempts,
            message: f.message,
        })?;
        let vectors = parse_vectors(&resp).ok_or_else(|| EmbeddingError::Provider {
            provider: self.config.model.clone(),
            attempts: 1,
            message: "response is not a list of vectors".into(),
        })?;
        check_vectors(&self.config.model, self.config.dimension, texts.len(), &vectors)?;
        Ok(vectors)
    }
}

fn parse_vectors(v: &Value) -> Option<Vec<Vec<f64>>> {
    let list = match v {
        Value::Array(a) => a.clone(),
        Value::Object(o) => {
            if let Some(Value::Array(a)) = o.get("embeddings") {
                a.clone()
            } else if let Some(Value::Array(data)) = o.get("data") {
                data.iter().map(|d| d.get("embedding").cloned()).collect::<Option<Vec<_>>>()?
            } else {
                return None;
            }
        }
        _ => return None,
    };
    list.iter()
        .map(|row| row.as_array()?.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
        .collect()
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
