use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest};
use crate::http::{self, HttpSettings};

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub http: HttpSettings,
    pub model: String,
}

/// Chat-completions endpoint.
///
/// Sends `{"model", "messages", "temperature", "seed"}` and reads the text
/// from `choices[0].message.content`, `message.content` or `content`.
pub struct HttpChatBackend {
    name: String,
    config: HttpChatConfig,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(name: &str, config: HttpChatConfig) -> Self {
        let agent = http::agent(&config.http);
        Self { name: name.to_string(), config, agent }
    }
}

pub(crate) fn request_body(model: &str, req: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": req.messages,
        "temperature": req.temperature,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn response_text(v: &Value) -> Option<String> {
    v.pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/message/content"))
        .or_else(|| v.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = request_body(&self.config.model, req);
        let resp = http::post_json(&self.agent, &self.config.http, &body).map_err(|f| {
            if f.message.to_lowercase().contains("timeout") || f.message.to_lowercase().contains("timed out") {
                BackendError::Timeout { backend: self.name.clone() }
            } else {
                BackendError::Failed { backend: self.name.clone(), message: f.message }
            }
        })?;
        response_text(&resp).ok_or_else(|| BackendError::Failed {
            backend: self.name.clone(),
            message: "response has no message content".into(),
        })
    }
}
