//! Blocking JSON-over-HTTP with bounded retries, shared by the embedding
//! and chat backends.

use std::thread;
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub url: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub token_env: Option<String>,
    pub timeout: Duration,
    pub max_attempts: usize,
    pub backoff: Duration,
}

impl HttpSettings {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token_env: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

/// Outcome of a failed request after all attempts.
#[derive(Debug, Clone)]
pub struct HttpFailure {
    pub attempts: usize,
    pub message: String,
}

pub fn agent(settings: &HttpSettings) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(settings.timeout))
        .http_status_as_error(true)
        .build()
        .into()
}

/// POST `body` as JSON and parse the JSON response, retrying transport and
/// status failures with exponential backoff.
pub fn post_json(agent: &ureq::Agent, settings: &HttpSettings, body: &Value) -> Result<Value, HttpFailure> {
    let token = match &settings.token_env {
        Some(var) => match std::env::var(var) {
            Ok(t) => Some(t),
            Err(_) => {
                return Err(HttpFailure { attempts: 0, message: format!("environment variable `{var}` is not set") })
            }
        },
        None => None,
    };
    let attempts = settings.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let mut req = agent.post(&settings.url).header("Content-Type", "application/json");
        if let Some(t) = &token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => match resp.body_mut().read_json::<Value>() {
                Ok(v) => return Ok(v),
                Err(e) => last = format!("invalid JSON response: {e}"),
            },
            Err(e) => last = e.to_string(),
        }
        tracing::warn!(url = %settings.url, attempt, error = %last, "request failed");
        if attempt < attempts {
            thread::sleep(settings.backoff * 2u32.saturating_pow(attempt as u32 - 1));
        }
    }
    Err(HttpFailure { attempts, message: last })
}
