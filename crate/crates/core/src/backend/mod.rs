//! Language-model backends.
//!
//! Coders, moderators, groupers and cluster labelers all speak one
//! chat-completion contract ([`ChatBackend`]). Each request carries the
//! rendered prompt messages plus a structured [`Task`] describing the same
//! work; HTTP backends send the messages, mock backends read the task.

mod chat_http;
pub mod mock;
pub mod prompt;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chat_http::{HttpChatBackend, HttpChatConfig};
pub use prompt::PromptTemplates;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend `{backend}` timed out")]
    Timeout { backend: String },
    #[error("backend `{backend}` failed: {message}")]
    Failed { backend: String, message: String },
    #[error("unknown backend spec `{0}`")]
    UnknownSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

/// One code–utterance pair shown to a grouping model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupItem {
    pub code: String,
    pub text: String,
}

/// The structured job behind a chat request.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Code { utterance: String },
    Moderate { utterance: String, candidates: Vec<String> },
    Group { items: Vec<GroupItem>, repair: bool },
    NameCluster { codes: Vec<String>, snippets: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub task: Task,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Declarative description of a backend, as written in a pipeline config.
///
/// `endpoint` is either `mock:<script>` (see [`mock::MockBackend`]) or an
/// `http(s)://` chat-completions URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_attempts: Option<usize>,
}

impl BackendSpec {
    pub fn mock(script: &str) -> Self {
        Self {
            endpoint: format!("mock:{script}"),
            model: None,
            token_env: None,
            temperature: None,
            timeout_secs: None,
            max_attempts: None,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock:")
    }
}

/// Instantiate a backend from its spec under the given display name.
pub fn build_backend(name: &str, spec: &BackendSpec) -> Result<Arc<dyn ChatBackend>, BackendError> {
    if let Some(script) = spec.endpoint.strip_prefix("mock:") {
        return Ok(Arc::new(mock::MockBackend::parse(name, script)?));
    }
    if spec.endpoint.starts_with("http://") || spec.endpoint.starts_with("https://") {
        let mut http = crate::http::HttpSettings::new(spec.endpoint.clone());
        http.token_env = spec.token_env.clone();
        if let Some(t) = spec.timeout_secs {
            http.timeout = std::time::Duration::from_secs(t);
        }
        if let Some(a) = spec.max_attempts {
            http.max_attempts = a;
        }
        let model = spec.model.clone().unwrap_or_else(|| name.to_string());
        return Ok(Arc::new(HttpChatBackend::new(name, HttpChatConfig { http, model })));
    }
    Err(BackendError::UnknownSpec(spec.endpoint.clone()))
}
