//! Open coding: one short code per utterance.
//!
//! Runs in two phases. Candidate generation and moderation are independent
//! per utterance and run on a bounded worker pool. Refinement then folds over
//! the corpus in order, reusing an earlier code whenever the new code's
//! similarity to it strictly exceeds `tau`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatBackend, ChatRequest, PromptTemplates, Task};
use crate::corpus::{Corpus, Utterance};
use crate::embedding::{cosine_similarity, exceeds, EmbeddingError, EmbeddingProvider};
use crate::text::{clean_label, normalize_label, MAX_LABEL_WORDS};

#[derive(Debug, Error)]
pub enum OpenCodingError {
    #[error("no coder backends configured")]
    NoCoders,
    #[error("moderation needs at least one candidate")]
    NoCandidates,
    #[error("refinement threshold {0} must lie strictly between 0 and 1")]
    BadTau(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub backend: String,
    pub label: String,
    /// The raw output was longer than five words and was cut.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoderFailure {
    pub backend: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub failures: Vec<CoderFailure>,
}

/// What the moderator decided and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeratorDecision {
    pub label: String,
    /// The label equals (after normalization) one of the candidates.
    pub matched_candidate: bool,
    /// The moderator failed and the first candidate was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

/// An utterance with its refined open code and full provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedUtterance {
    pub utterance_id: String,
    pub text: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CoderFailure>,
    pub moderator: Option<ModeratorDecision>,
    pub refined_code: Option<String>,
    pub reused: bool,
    /// Every coder failed; the utterance has no code.
    pub uncodable: bool,
}

impl CodedUtterance {
    pub fn moderator_choice(&self) -> Option<&str> {
        self.moderator.as_ref().map(|m| m.label.as_str())
    }

    pub fn code(&self) -> Option<&str> {
        self.refined_code.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub tau: f64,
    pub comparison_provider: String,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { tau: 0.7, comparison_provider: "test-hash".into() }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), OpenCodingError> {
        if self.tau > 0.0 && self.tau < 1.0 {
            Ok(())
        } else {
            Err(OpenCodingError::BadTau(self.tau))
        }
    }
}

/// Coder ensemble plus moderator, with the prompts they are driven by.
#[derive(Clone)]
pub struct CodingBackends {
    pub coders: Vec<Arc<dyn ChatBackend>>,
    pub moderator: Arc<dyn ChatBackend>,
    pub templates: PromptTemplates,
    pub temperature: f64,
    pub seed: Option<u64>,
}

/// Ask every coder for a label. Failing coders are recorded, not fatal.
pub fn generate_candidates(
    u: &Utterance,
    coders: &[Arc<dyn ChatBackend>],
    templates: &PromptTemplates,
    temperature: f64,
    seed: Option<u64>,
) -> Result<CandidateSet, OpenCodingError> {
    if coders.is_empty() {
        return Err(OpenCodingError::NoCoders);
    }
    let request = ChatRequest {
        messages: templates.coder_messages(&u.text),
        temperature,
        seed,
        task: Task::Code { utterance: u.text.clone() },
    };
    let mut set = CandidateSet::default();
    for coder in coders {
        match coder.complete(&request) {
            Ok(raw) => match clean_label(&raw, MAX_LABEL_WORDS) {
                Some(l) => set.candidates.push(Candidate { backend: coder.name().to_string(), label: l.text, truncated: l.truncated }),
                None => set.failures.push(CoderFailure { backend: coder.name().to_string(), error: "empty response".into() }),
            },
            Err(e) => {
                tracing::warn!(utterance = %u.id, coder = coder.name(), error = %e, "coder failed");
                set.failures.push(CoderFailure { backend: coder.name().to_string(), error: e.to_string() });
            }
        }
    }
    Ok(set)
}

/// Let the moderator pick among candidates or propose its own label.
///
/// A failing or empty moderator falls back to the first candidate.
pub fn moderate(
    u: &Utterance,
    candidates: &[Candidate],
    moderator: &dyn ChatBackend,
    templates: &PromptTemplates,
    temperature: f64,
    seed: Option<u64>,
) -> Result<ModeratorDecision, OpenCodingError> {
    let first = candidates.first().ok_or(OpenCodingError::NoCandidates)?;
    let labels: Vec<String> = candidates.iter().map(|c| c.label.clone()).collect();
    let request = ChatRequest {
        messages: templates.moderator_messages(&u.text, &labels),
        temperature,
        seed,
        task: Task::Moderate { utterance: u.text.clone(), candidates: labels.clone() },
    };
    let cleaned = match moderator.complete(&request) {
        Ok(raw) => clean_label(&raw, MAX_LABEL_WORDS),
        Err(e) => {
            tracing::warn!(utterance = %u.id, error = %e, "moderator failed; using first candidate");
            None
        }
    };
    Ok(match cleaned {
        Some(l) => {
            let norm = normalize_label(&l.text);
            let matched = labels.iter().any(|c| normalize_label(c) == norm);
            ModeratorDecision { label: l.text, matched_candidate: matched, fallback: false, truncated: l.truncated }
        }
        None => ModeratorDecision { label: first.label.clone(), matched_candidate: true, fallback: true, truncated: false },
    })
}

struct PriorCode {
    display: String,
    vector: Vec<f64>,
}

/// Sequential label refinement over the distinct codes seen so far.
pub struct Refiner<'p> {
    provider: &'p dyn EmbeddingProvider,
    tau: f64,
    history: Vec<PriorCode>,
    vectors: HashMap<String, Vec<f64>>,
}

impl<'p> Refiner<'p> {
    pub fn new(provider: &'p dyn EmbeddingProvider, cfg: &RefinementConfig) -> Result<Self, OpenCodingError> {
        cfg.validate()?;
        Ok(Self { provider, tau: cfg.tau, history: Vec::new(), vectors: HashMap::new() })
    }

    /// Seed the history with prior codes in stream order; duplicates (after
    /// normalization) keep their first occurrence.
    pub fn with_history(mut self, history: &[String]) -> Result<Self, OpenCodingError> {
        for h in history {
            let norm = normalize_label(h);
            if !self.history.iter().any(|p| normalize_label(&p.display) == norm) {
                let vector = self.vector(&norm)?;
                self.history.push(PriorCode { display: h.clone(), vector });
            }
        }
        Ok(self)
    }

    fn vector(&mut self, normalized: &str) -> Result<Vec<f64>, OpenCodingError> {
        if let Some(v) = self.vectors.get(normalized) {
            return Ok(v.clone());
        }
        let v = self.provider.embed_batch(&[normalized])?.pop().ok_or_else(|| EmbeddingError::CountMismatch {
            provider: self.provider.name().into(),
            expected: 1,
            got: 0,
        })?;
        self.vectors.insert(normalized.to_string(), v.clone());
        Ok(v)
    }

    /// Distinct codes in the order they were introduced.
    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.history.iter().map(|p| p.display.as_str())
    }

    /// Returns the final label and whether an earlier code was reused.
    pub fn refine(&mut self, new_label: &str) -> Result<(String, bool), OpenCodingError> {
        let norm = normalize_label(new_label);
        let v = self.vector(&norm)?;
        let mut best: Option<(f64, usize)> = None;
        for (i, prior) in self.history.iter().enumerate() {
            let sim = cosine_similarity(&v, &prior.vector)?;
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, i));
            }
        }
        if let Some((sim, i)) = best {
            if exceeds(sim, self.tau) {
                return Ok((self.history[i].display.clone(), true));
            }
        }
        self.history.push(PriorCode { display: new_label.to_string(), vector: v });
        Ok((new_label.to_string(), false))
    }
}

/// Stateless form of [`Refiner::refine`] against an explicit history.
pub fn refine_label(
    new_label: &str,
    history: &[String],
    cfg: &RefinementConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(String, bool), OpenCodingError> {
    Refiner::new(provider, cfg)?.with_history(history)?.refine(new_label)
}

struct Annotated {
    set: CandidateSet,
    decision: Option<ModeratorDecision>,
}

fn annotate(u: &Utterance, b: &CodingBackends) -> Result<Annotated, OpenCodingError> {
    let set = generate_candidates(u, &b.coders, &b.templates, b.temperature, b.seed)?;
    let decision = if set.candidates.is_empty() {
        tracing::warn!(utterance = %u.id, "all coders failed; utterance is uncodable");
        None
    } else {
        Some(moderate(u, &set.candidates, b.moderator.as_ref(), &b.templates, b.temperature, b.seed)?)
    };
    Ok(Annotated { set, decision })
}

/// Code every utterance of the corpus.
///
/// `parallelism` bounds the number of utterances annotated concurrently.
pub fn run_open_coding(
    corpus: &Corpus,
    backends: &CodingBackends,
    cfg: &RefinementConfig,
    provider: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<Vec<CodedUtterance>, OpenCodingError> {
    cfg.validate()?;
    if backends.coders.is_empty() {
        return Err(OpenCodingError::NoCoders);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| OpenCodingError::Pool(e.to_string()))?;
    let annotated: Vec<Annotated> = pool.install(|| {
        corpus.utterances().par_iter().map(|u| annotate(u, backends)).collect::<Result<Vec<_>, _>>()
    })?;

    let mut refiner = Refiner::new(provider, cfg)?;
    let mut out = Vec::with_capacity(corpus.len());
    for (u, a) in corpus.utterances().iter().zip(annotated) {
        let (refined, reused) = match &a.decision {
            Some(d) => {
                let (code, reused) = refiner.refine(&d.label)?;
                (Some(code), reused)
            }
            None => (None, false),
        };
        out.push(CodedUtterance {
            utterance_id: u.id.clone(),
            text: u.text.clone(),
            candidates: a.set.candidates,
            failures: a.set.failures,
            uncodable: a.decision.is_none(),
            moderator: a.decision,
            refined_code: refined,
            reused,
        });
    }
    Ok(out)
}

pub fn write_coded_jsonl<W: Write>(coded: &[CodedUtterance], mut out: W) -> Result<(), OpenCodingError> {
    for c in coded {
        let line = serde_json::to_string(c).map_err(|e| OpenCodingError::Parse { line: 0, message: e.to_string() })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_coded_jsonl<R: BufRead>(reader: R) -> Result<Vec<CodedUtterance>, OpenCodingError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| OpenCodingError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{FnBackend, MockBackend, ScriptedBackend};
    use crate::backend::BackendError;
    use crate::embedding::TestHashProvider;
    use crate::text::word_count;

    fn utt(id: &str, text: &str) -> Utterance {
        Utterance {
            id: id.into(),
            text: text.into(),
            speaker: "s".into(),
            party: String::new(),
            role: String::new(),
            meeting_title: "m".into(),
            date: "2021-05-01".into(),
            source_doc_id: "d".into(),
            domain_label: None,
            subtopic_label: None,
        }
    }

    fn mock(name: &str, script: &str) -> Arc<dyn ChatBackend> {
        Arc::new(MockBackend::parse(name, script).unwrap())
    }

    fn backends(coders: Vec<Arc<dyn ChatBackend>>, moderator: Arc<dyn ChatBackend>) -> CodingBackends {
        CodingBackends { coders, moderator, templates: PromptTemplates::default(), temperature: 0.0, seed: Some(1) }
    }

    #[test]
    fn three_coders_three_candidates() {
        let coders = vec![mock("a", "first-words:1"), mock("b", "first-words:2"), mock("c", "first-words:3")];
        let u = utt("u", "Rising rents hurt young families badly");
        let set = generate_candidates(&u, &coders, &PromptTemplates::default(), 0.0, None).unwrap();
        let labels: Vec<&str> = set.candidates.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["rising", "rising rents", "rising rents hurt"]);
        assert!(set.failures.is_empty());
    }

    #[test]
    fn long_coder_output_is_truncated_and_flagged() {
        let coders = vec![mock("long", "fixed:one two three four five six seven eight nine")];
        let set = generate_candidates(&utt("u", "x"), &coders, &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(set.candidates[0].label, "one two three four five");
        assert!(set.candidates[0].truncated);
    }

    #[test]
    fn timeouts_become_failure_records() {
        let coders = vec![mock("t1", "timeout"), mock("ok", "first-words:2"), mock("t2", "timeout")];
        let set = generate_candidates(&utt("u", "budget deficit grows"), &coders, &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(set.candidates.len(), 1);
        assert_eq!(set.failures.len(), 2);
        assert_eq!(set.failures[0].backend, "t1");
    }

    #[test]
    fn no_coders_is_an_error() {
        assert!(matches!(
            generate_candidates(&utt("u", "x"), &[], &PromptTemplates::default(), 0.0, None),
            Err(OpenCodingError::NoCoders)
        ));
    }

    #[test]
    fn moderator_single_candidate_passthrough() {
        let c = vec![Candidate { backend: "a".into(), label: "housing".into(), truncated: false }];
        let d = moderate(&utt("u", "x"), &c, mock("m", "first").as_ref(), &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(d.label, "housing");
        assert!(d.matched_candidate && !d.fallback);
    }

    #[test]
    fn moderator_novel_label_is_flagged() {
        let c = vec![Candidate { backend: "a".into(), label: "housing".into(), truncated: false }];
        let m = mock("m", "fixed:affordable rental housing");
        let d = moderate(&utt("u", "x"), &c, m.as_ref(), &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(d.label, "affordable rental housing");
        assert!(!d.matched_candidate);
    }

    #[test]
    fn moderator_failure_falls_back_to_first_candidate() {
        let c = vec![
            Candidate { backend: "a".into(), label: "first one".into(), truncated: false },
            Candidate { backend: "b".into(), label: "second".into(), truncated: false },
        ];
        let d = moderate(&utt("u", "x"), &c, mock("m", "fail").as_ref(), &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(d.label, "first one");
        assert!(d.fallback);
        assert!(matches!(
            moderate(&utt("u", "x"), &[], mock("m", "first").as_ref(), &PromptTemplates::default(), 0.0, None),
            Err(OpenCodingError::NoCandidates)
        ));
    }

    #[test]
    fn nearest_moderator_matches_brute_force() {
        let p = TestHashProvider::new(384);
        let u = utt("u", "pension age should not rise for manual workers");
        let labels = ["pension age", "manual workers pension", "defence", "age"];
        let c: Vec<Candidate> =
            labels.iter().map(|l| Candidate { backend: "x".into(), label: l.to_string(), truncated: false }).collect();
        // oracle: exhaustive cosine, first maximum wins
        let target = p.embed(&u.text);
        let sims: Vec<f64> = labels.iter().map(|l| cosine_similarity(&target, &p.embed(l)).unwrap()).collect();
        let mut best = 0;
        for i in 1..sims.len() {
            if sims[i] > sims[best] {
                best = i;
            }
        }
        let m = mock("m", "nearest");
        for _ in 0..2 {
            let d = moderate(&u, &c, m.as_ref(), &PromptTemplates::default(), 0.0, None).unwrap();
            assert_eq!(d.label, labels[best]);
        }
    }

    #[test]
    fn refine_empty_history_keeps_label() {
        let p = TestHashProvider::new(64);
        let r = refine_label("asylum policy", &[], &RefinementConfig::default(), &p).unwrap();
        assert_eq!(r, ("asylum policy".to_string(), false));
    }

    #[test]
    fn refine_exact_match_reuses_first_display_form() {
        let p = TestHashProvider::new(64);
        let history = vec!["Asylum Policy".to_string(), "budget".to_string()];
        let r = refine_label("asylum  policy", &history, &RefinementConfig::default(), &p).unwrap();
        assert_eq!(r, ("Asylum Policy".to_string(), true));
    }

    #[test]
    fn refine_picks_the_most_similar_prior() {
        // Disjoint-bucket tokens make cosine = shared / sqrt(|a| |b|).
        let p = TestHashProvider::new(4096);
        let words = distinct_bucket_words(&p, 40);
        let new: Vec<&str> = words[..10].iter().map(String::as_str).collect();
        let prior = |shared: usize, fresh: std::ops::Range<usize>| -> String {
            new[..shared].iter().copied().chain(words[fresh].iter().map(String::as_str)).collect::<Vec<_>>().join(" ")
        };
        let h42 = prior(4, 10..19); // 4 / sqrt(10*13) = 0.351
        let h81 = prior(8, 19..21); // 8 / 10 = 0.8
        let h75 = prior(7, 21..24); // 7 / 10 = 0.7 (not above tau)
        let history = vec![h42.clone(), h81.clone(), h75.clone()];
        let new_label = new.join(" ");
        let sims: Vec<f64> =
            history.iter().map(|h| cosine_similarity(&p.embed(&new_label), &p.embed(h)).unwrap()).collect();
        assert!(sims[1] > sims[2] && sims[2] > sims[0]);
        let r = refine_label(&new_label, &history, &RefinementConfig::default(), &p).unwrap();
        assert_eq!(r, (h81, true));
    }

    pub(crate) fn distinct_bucket_words(p: &TestHashProvider, n: usize) -> Vec<String> {
        let mut used = std::collections::HashSet::new();
        let mut out = Vec::new();
        let mut i = 0;
        while out.len() < n {
            let w = format!("w{i}");
            if used.insert(p.bucket(&w).0) {
                out.push(w);
            }
            i += 1;
        }
        out
    }

    #[test]
    fn refine_tie_goes_to_earliest() {
        let p = TestHashProvider::new(64);
        // "tax cuts" and "cuts tax" embed identically
        let history = vec!["tax cuts".to_string(), "cuts tax".to_string()];
        let r = refine_label("TAX cuts", &history, &RefinementConfig::default(), &p).unwrap();
        assert_eq!(r.0, "tax cuts");
    }

    #[test]
    fn bad_tau_rejected() {
        let p = TestHashProvider::new(8);
        let cfg = RefinementConfig { tau: 1.0, ..Default::default() };
        assert!(matches!(refine_label("a", &[], &cfg, &p), Err(OpenCodingError::BadTau(_))));
    }

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new("c", texts.iter().enumerate().map(|(i, t)| utt(&format!("u{i}"), t)).collect()).unwrap()
    }

    #[test]
    fn run_is_deterministic() {
        let c = corpus(&[
            "Housing prices keep rising in cities",
            "Defence spending must increase",
            "Housing shortage hurts students",
            "Climate targets for industry",
            "Pension reform for workers",
        ]);
        let b = backends(vec![mock("a", "first-words:2"), mock("b", "first-words:3")], mock("m", "nearest"));
        let p = TestHashProvider::new(384);
        let mut runs = Vec::new();
        for _ in 0..2 {
            let coded = run_open_coding(&c, &b, &RefinementConfig::default(), &p, 4).unwrap();
            let mut buf = Vec::new();
            write_coded_jsonl(&coded, &mut buf).unwrap();
            runs.push(buf);
        }
        assert_eq!(runs[0], runs[1]);
        let back = read_coded_jsonl(runs[0].as_slice()).unwrap();
        assert_eq!(back.len(), 5);
    }

    #[test]
    fn identical_utterances_share_a_code() {
        let c = corpus(&["Tax cuts for small firms", "Bridges need repair", "Schools lack teachers", "Tax cuts for small firms"]);
        let b = backends(vec![mock("a", "first-words:3")], mock("m", "first"));
        let coded = run_open_coding(&c, &b, &RefinementConfig::default(), &TestHashProvider::new(384), 2).unwrap();
        assert_eq!(coded[3].refined_code, coded[0].refined_code);
        assert!(coded[3].reused);
        assert!(!coded[0].reused);
    }

    #[test]
    fn dead_coder_does_not_stop_the_run() {
        let c = corpus(&["one thing", "another thing", "third item"]);
        let b = backends(vec![mock("dead", "fail"), mock("a", "first-words:2")], mock("m", "first"));
        let coded = run_open_coding(&c, &b, &RefinementConfig::default(), &TestHashProvider::new(64), 2).unwrap();
        assert!(coded.iter().all(|c| c.refined_code.is_some() && !c.uncodable));
        assert!(coded.iter().all(|c| c.failures.len() == 1));
    }

    #[test]
    fn all_coders_dead_marks_uncodable() {
        let c = corpus(&["one thing"]);
        let b = backends(vec![mock("dead", "fail")], mock("m", "first"));
        let coded = run_open_coding(&c, &b, &RefinementConfig::default(), &TestHashProvider::new(64), 1).unwrap();
        assert!(coded[0].uncodable);
        assert!(coded[0].refined_code.is_none());
    }

    #[test]
    fn moderator_sees_every_candidate() {
        let seen = Arc::new(ScriptedBackend::new("m", vec![Ok("chosen label".into())]));
        let b = backends(vec![mock("a", "first-words:1"), mock("b", "first-words:2")], seen.clone());
        let c = corpus(&["Energy prices soar"]);
        run_open_coding(&c, &b, &RefinementConfig::default(), &TestHashProvider::new(64), 1).unwrap();
        let req = &seen.requests()[0];
        match &req.task {
            Task::Moderate { candidates, .. } => assert_eq!(candidates, &["energy", "energy prices"]),
            other => panic!("unexpected task {other:?}"),
        }
    }

    #[test]
    fn provenance_and_word_bounds_hold() {
        let texts: Vec<String> = (0..40).map(|i| format!("topic{} item{} shared words here", i % 7, i % 3)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let flaky = Arc::new(FnBackend::new("flaky", |req| match &req.task {
            Task::Code { utterance } if utterance.contains("topic3") => {
                Err(BackendError::Failed { backend: "flaky".into(), message: "down".into() })
            }
            Task::Code { utterance } => Ok(utterance.clone()),
            _ => Ok(String::new()),
        }));
        let b = backends(vec![flaky, mock("a", "first-words:2")], mock("m", "nearest"));
        let coded = run_open_coding(&c, &b, &RefinementConfig::default(), &TestHashProvider::new(384), 3).unwrap();
        let mut earlier: Vec<String> = Vec::new();
        for cu in &coded {
            let code = cu.refined_code.as_deref().unwrap();
            assert!((1..=5).contains(&word_count(code)));
            if cu.reused {
                assert!(earlier.iter().any(|e| e == code));
            } else {
                assert_eq!(Some(code), cu.moderator_choice());
            }
            earlier.push(code.to_string());
        }
    }
}
