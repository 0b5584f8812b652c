//! Deterministic offline backends.
//!
//! [`MockBackend`] is what `mock:<script>` endpoints build. Scripts:
//!
//! | script            | code                          | moderate                         | group                         | name cluster          |
//! |-------------------|-------------------------------|----------------------------------|-------------------------------|-----------------------|
//! | `first-words:N`   | first N content words         | first candidate                  | by first word of code         | most frequent code    |
//! | `first`           | first content word            | first candidate                  | by first word of code         | most frequent code    |
//! | `nearest`         | first content word            | candidate closest to utterance   | by first word of code         | most frequent code    |
//! | `fixed:<label>`   | `<label>`                     | `<label>`                        | all codes under `<label>`     | `<label>`             |
//! | `fail`            | error                         | error                            | error                         | error                 |
//! | `timeout`         | timeout                       | timeout                          | timeout                       | timeout               |
//! | `script:<path>`   | next entry of a JSON string array file, the last entry repeating |  |                        |                       |
//!
//! "Closest" uses the test-hash embedder (384 dimensions); ties go to the
//! earliest candidate. [`FnBackend`] and [`ScriptedBackend`] are building
//! blocks for tests.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatRequest, GroupItem, Task};
use crate::embedding::{cosine_similarity, TestHashProvider};
use crate::text::alnum_tokens;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "do", "does", "for", "from", "has", "have", "i",
    "in", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "so", "that", "the", "their", "them",
    "there", "these", "they", "this", "to", "us", "was", "we", "were", "what", "which", "will", "with", "would", "you",
    "your", "all", "can", "should", "must", "very", "more", "also", "than", "then", "here", "about",
];

/// Lowercased tokens with common function words removed.
pub fn content_words(text: &str) -> Vec<String> {
    let words: Vec<String> = alnum_tokens(text).into_iter().filter(|w| !STOPWORDS.contains(&w.as_str())).collect();
    if words.is_empty() {
        alnum_tokens(text)
    } else {
        words
    }
}

#[derive(Debug)]
enum Script {
    FirstWords(usize),
    Nearest,
    Fixed(String),
    Fail,
    Timeout,
    File { responses: Vec<String>, next: AtomicUsize },
}

#[derive(Debug)]
pub struct MockBackend {
    name: String,
    script: Script,
}

impl MockBackend {
    pub fn parse(name: &str, script: &str) -> Result<Self, BackendError> {
        let unknown = || BackendError::UnknownSpec(format!("mock:{script}"));
        let script = if script == "first" {
            Script::FirstWords(1)
        } else if let Some(n) = script.strip_prefix("first-words:") {
            let n: usize = n.parse().map_err(|_| unknown())?;
            if n == 0 {
                return Err(unknown());
            }
            Script::FirstWords(n)
        } else if script == "nearest" {
            Script::Nearest
        } else if let Some(label) = script.strip_prefix("fixed:") {
            Script::Fixed(label.to_string())
        } else if script == "fail" {
            Script::Fail
        } else if script == "timeout" {
            Script::Timeout
        } else if let Some(path) = script.strip_prefix("script:") {
            let raw = std::fs::read_to_string(path).map_err(|e| BackendError::Failed {
                backend: name.to_string(),
                message: format!("cannot read script `{path}`: {e}"),
            })?;
            let responses: Vec<String> = serde_json::from_str(&raw).map_err(|e| BackendError::Failed {
                backend: name.to_string(),
                message: format!("script `{path}` is not a JSON string array: {e}"),
            })?;
            if responses.is_empty() {
                return Err(unknown());
            }
            Script::File { responses, next: AtomicUsize::new(0) }
        } else {
            return Err(unknown());
        };
        Ok(Self { name: name.to_string(), script })
    }
}

/// Group codes by their first word; the word is the category label.
pub fn group_by_first_word(items: &[GroupItem]) -> String {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for item in items {
        let key = alnum_tokens(&item.code).into_iter().next().unwrap_or_else(|| item.code.clone());
        let codes = groups.entry(key).or_default();
        if !codes.contains(&item.code) {
            codes.push(item.code.clone());
        }
    }
    serde_json::to_string(&groups).expect("string map serializes")
}

fn most_frequent(codes: &[String]) -> String {
    codes.first().cloned().unwrap_or_default()
}

fn nearest_candidate(utterance: &str, candidates: &[String]) -> String {
    let p = TestHashProvider::new(384);
    let target = p.embed(utterance);
    let mut best: Option<(f64, &String)> = None;
    for c in candidates {
        let sim = cosine_similarity(&target, &p.embed(c)).unwrap_or(-1.0);
        if best.is_none_or(|(b, _)| sim > b) {
            best = Some((sim, c));
        }
    }
    best.map(|(_, c)| c.clone()).unwrap_or_default()
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        match &self.script {
            Script::Fail => Err(BackendError::Failed { backend: self.name.clone(), message: "scripted failure".into() }),
            Script::Timeout => Err(BackendError::Timeout { backend: self.name.clone() }),
            Script::File { responses, next } => {
                let i = next.fetch_add(1, Ordering::SeqCst).min(responses.len() - 1);
                Ok(responses[i].clone())
            }
            Script::Fixed(label) => Ok(match &req.task {
                Task::Group { items, .. } => {
                    let mut codes: Vec<&str> = Vec::new();
                    for i in items {
                        if !codes.contains(&i.code.as_str()) {
                            codes.push(&i.code);
                        }
                    }
                    serde_json::json!({ label.as_str(): codes }).to_string()
                }
                _ => label.clone(),
            }),
            Script::FirstWords(n) => Ok(match &req.task {
                Task::Code { utterance } => content_words(utterance).into_iter().take(*n).collect::<Vec<_>>().join(" "),
                Task::Moderate { candidates, .. } => candidates.first().cloned().unwrap_or_default(),
                Task::Group { items, .. } => group_by_first_word(items),
                Task::NameCluster { codes, .. } => most_frequent(codes),
            }),
            Script::Nearest => Ok(match &req.task {
                Task::Code { utterance } => content_words(utterance).into_iter().take(1).collect(),
                Task::Moderate { utterance, candidates } => nearest_candidate(utterance, candidates),
                Task::Group { items, .. } => group_by_first_word(items),
                Task::NameCluster { codes, .. } => most_frequent(codes),
            }),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend driven by a closure.
pub struct FnBackend {
    name: String,
    f: Box<Responder>,
}

impl FnBackend {
    pub fn new(name: &str, f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { name: name.to_string(), f: Box::new(f) }
    }
}

impl ChatBackend for FnBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (self.f)(req)
    }
}

/// Replays a fixed list of outcomes in order; the last one repeats. Records
/// every request it receives.
pub struct ScriptedBackend {
    name: String,
    outcomes: Vec<Result<String, BackendError>>,
    next: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(name: &str, outcomes: Vec<Result<String, BackendError>>) -> Self {
        assert!(!outcomes.is_empty(), "scripted backend needs at least one outcome");
        Self { name: name.to_string(), outcomes, next: AtomicUsize::new(0), seen: Mutex::default() }
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().expect("poisoned").len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("poisoned").clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.seen.lock().expect("poisoned").push(req.clone());
        let i = self.next.fetch_add(1, Ordering::SeqCst).min(self.outcomes.len() - 1);
        self.outcomes[i].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(task: Task) -> ChatRequest {
        ChatRequest { messages: vec![], temperature: 0.0, seed: None, task }
    }

    #[test]
    fn first_words_skips_function_words() {
        let b = MockBackend::parse("m", "first-words:2").unwrap();
        let out = b.complete(&req(Task::Code { utterance: "We need more affordable housing now".into() })).unwrap();
        assert_eq!(out, "need affordable");
    }

    #[test]
    fn nearest_picks_the_most_similar_candidate() {
        let b = MockBackend::parse("m", "nearest").unwrap();
        let t = Task::Moderate {
            utterance: "housing prices keep rising".into(),
            candidates: vec!["defence budget".into(), "housing prices".into(), "prices".into()],
        };
        assert_eq!(b.complete(&req(t)).unwrap(), "housing prices");
    }

    #[test]
    fn grouping_by_first_word() {
        let items = vec![
            GroupItem { code: "housing shortage".into(), text: "x".into() },
            GroupItem { code: "housing prices".into(), text: "y".into() },
            GroupItem { code: "tax cuts".into(), text: "z".into() },
        ];
        let out = group_by_first_word(&items);
        assert_eq!(out, r#"{"housing":["housing shortage","housing prices"],"tax":["tax cuts"]}"#);
    }

    #[test]
    fn failure_scripts() {
        let t = Task::Code { utterance: "x".into() };
        assert!(matches!(MockBackend::parse("m", "fail").unwrap().complete(&req(t.clone())), Err(BackendError::Failed { .. })));
        assert!(matches!(MockBackend::parse("m", "timeout").unwrap().complete(&req(t)), Err(BackendError::Timeout { .. })));
        assert!(MockBackend::parse("m", "first-words:0").is_err());
    }

    #[test]
    fn script_file_replays_then_repeats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"["one", "two"]"#).unwrap();
        let b = MockBackend::parse("m", &format!("script:{}", path.display())).unwrap();
        let t = req(Task::Code { utterance: "x".into() });
        let outs: Vec<String> = (0..3).map(|_| b.complete(&t).unwrap()).collect();
        assert_eq!(outs, ["one", "two", "two"]);
    }

    #[test]
    fn scripted_records_requests() {
        let b = ScriptedBackend::new("s", vec![Err(BackendError::Timeout { backend: "s".into() }), Ok("ok".into())]);
        let t = req(Task::Code { utterance: "x".into() });
        assert!(b.complete(&t).is_err());
        assert_eq!(b.complete(&t).unwrap(), "ok");
        assert_eq!(b.complete(&t).unwrap(), "ok");
        assert_eq!(b.calls(), 3);
    }
}
