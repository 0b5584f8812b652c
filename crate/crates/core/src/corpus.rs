//! Utterance corpora: loading, validation, statistics and document-level splits.
//!
//! JSONL is the canonical on-disk form. CSV is accepted with a fixed header
//! set ([`CSV_COLUMNS`]); absent gold labels are written as empty cells.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_count;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: utterance `{id}` has empty text")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: duplicate utterance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: utterance `{id}` has a subtopic label but no domain label")]
    SubtopicWithoutDomain { line: usize, id: String },
    #[error("line {line}: utterance `{id}` has a malformed date `{date}`")]
    BadDate { line: usize, id: String, date: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus has {0} document(s); at least 2 are needed to split")]
    TooFewDocuments(usize),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

/// One speech turn with its metadata and gold topic labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub speaker: String,
    #[serde(default)]
    pub party: String,
    #[serde(default)]
    pub role: String,
    pub meeting_title: String,
    pub date: String,
    pub source_doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtopic_label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown corpus format `{other}` (expected jsonl or csv)")),
        }
    }
}

/// Header accepted for CSV corpora, in this exact order.
pub const CSV_COLUMNS: [&str; 10] = [
    "id",
    "text",
    "speaker",
    "party",
    "role",
    "meeting_title",
    "date",
    "source_doc_id",
    "domain_label",
    "subtopic_label",
];

const REQUIRED_FIELDS: [&str; 6] = ["id", "text", "speaker", "meeting_title", "date", "source_doc_id"];

/// An ordered, validated set of utterances. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    utterances: Vec<Utterance>,
}

impl Corpus {
    /// Validate and wrap utterances. Line numbers in errors are 1-based
    /// positions in `utterances`.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        if utterances.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            validate_utterance(u, i + 1)?;
            if !seen.insert(u.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: u.id.clone() });
            }
        }
        Ok(Self { name: name.into(), utterances })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Distinct document ids in first-appearance order.
    pub fn document_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.utterances
            .iter()
            .map(|u| u.source_doc_id.as_str())
            .filter(|d| seen.insert(*d))
            .collect()
    }

    /// Write the canonical JSONL form.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for u in &self.utterances {
            let line = serde_json::to_string(u).map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CorpusError::Parse { line: 0, message: e.to_string() };
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for u in &self.utterances {
            w.write_record([
                u.id.as_str(),
                &u.text,
                &u.speaker,
                &u.party,
                &u.role,
                &u.meeting_title,
                &u.date,
                &u.source_doc_id,
                u.domain_label.as_deref().unwrap_or(""),
                u.subtopic_label.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_utterance(u: &Utterance, line: usize) -> Result<(), CorpusError> {
    if u.id.trim().is_empty() {
        return Err(CorpusError::MissingField { line, field: "id" });
    }
    if u.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { line, id: u.id.clone() });
    }
    if u.subtopic_label.is_some() && u.domain_label.is_none() {
        return Err(CorpusError::SubtopicWithoutDomain { line, id: u.id.clone() });
    }
    if !is_iso_date(&u.date) {
        return Err(CorpusError::BadDate { line, id: u.id.clone(), date: u.date.clone() });
    }
    Ok(())
}

/// Accepts `YYYY-MM-DD`, optionally followed by a `T...` time part.
fn is_iso_date(s: &str) -> bool {
    let date = s.split('T').next().unwrap_or("");
    let parts: Vec<&str> = date.split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return false;
    }
    if !parts.iter().all(|p| p.bytes().all(|b| b.is_ascii_digit())) {
        return false;
    }
    let month: u32 = parts[1].parse().unwrap_or(0);
    let day: u32 = parts[2].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Load a corpus, keeping file order. The corpus name is the file stem.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let file = fs::File::open(path)?;
    match format {
        CorpusFormat::Jsonl => read_jsonl(&name, BufReader::new(file)),
        CorpusFormat::Csv => read_csv(&name, file),
    }
}

/// Parse JSONL from any reader. Blank lines are skipped; line numbers in
/// errors refer to physical lines.
pub fn read_jsonl<R: BufRead>(name: &str, reader: R) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    let mut lines_of = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        for field in REQUIRED_FIELDS {
            if obj.get(field).is_none_or(serde_json::Value::is_null) {
                return Err(CorpusError::MissingField { line: line_no, field });
            }
        }
        let mut u: Utterance =
            serde_json::from_value(value).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        blank_labels_to_none(&mut u);
        utterances.push(u);
        lines_of.push(line_no);
    }
    Corpus::new(name, utterances).map_err(|e| remap_line(e, &lines_of))
}

/// Parse CSV with the fixed [`CSV_COLUMNS`] header.
pub fn read_csv<R: std::io::Read>(name: &str, reader: R) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    for field in REQUIRED_FIELDS {
        if !headers.iter().any(|h| h == field) {
            return Err(CorpusError::MissingField { line: 1, field });
        }
    }
    if let Some(extra) = headers.iter().find(|h| !CSV_COLUMNS.contains(h)) {
        return Err(CorpusError::Parse { line: 1, message: format!("unexpected column `{extra}`") });
    }
    let mut utterances = Vec::new();
    let mut lines_of = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line_no = idx + 2;
        let record = record.map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let get = |col: &str| -> String {
            headers
                .iter()
                .position(|h| h == col)
                .and_then(|i| record.get(i))
                .unwrap_or("")
                .to_string()
        };
        let mut u = Utterance {
            id: get("id"),
            text: get("text"),
            speaker: get("speaker"),
            party: get("party"),
            role: get("role"),
            meeting_title: get("meeting_title"),
            date: get("date"),
            source_doc_id: get("source_doc_id"),
            domain_label: Some(get("domain_label")),
            subtopic_label: Some(get("subtopic_label")),
        };
        blank_labels_to_none(&mut u);
        utterances.push(u);
        lines_of.push(line_no);
    }
    Corpus::new(name, utterances).map_err(|e| remap_line(e, &lines_of))
}

fn blank_labels_to_none(u: &mut Utterance) {
    if u.domain_label.as_deref().is_some_and(|s| s.trim().is_empty()) {
        u.domain_label = None;
    }
    if u.subtopic_label.as_deref().is_some_and(|s| s.trim().is_empty()) {
        u.subtopic_label = None;
    }
}

// Corpus::new reports record positions; translate them back to file lines.
fn remap_line(err: CorpusError, lines_of: &[usize]) -> CorpusError {
    let fix = |line: usize| lines_of.get(line.wrapping_sub(1)).copied().unwrap_or(line);
    match err {
        CorpusError::MissingField { line, field } => CorpusError::MissingField { line: fix(line), field },
        CorpusError::EmptyText { line, id } => CorpusError::EmptyText { line: fix(line), id },
        CorpusError::DuplicateId { line, id } => CorpusError::DuplicateId { line: fix(line), id },
        CorpusError::SubtopicWithoutDomain { line, id } => CorpusError::SubtopicWithoutDomain { line: fix(line), id },
        CorpusError::BadDate { line, id, date } => CorpusError::BadDate { line: fix(line), id, date },
        other => other,
    }
}

/// A mean / max pair, as reported in dataset tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMax {
    pub mean: f64,
    pub max: usize,
}

impl MeanMax {
    fn of(values: &[usize]) -> Self {
        let max = values.iter().copied().max().unwrap_or(0);
        let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<usize>() as f64 / values.len() as f64 };
        Self { mean, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub utterances: usize,
    pub speakers: usize,
    pub parties: usize,
    pub documents: usize,
    pub speakers_per_doc: MeanMax,
    pub utterances_per_doc: f64,
    pub utterance_length: MeanMax,
    pub document_length: MeanMax,
    pub domains: usize,
    pub subtopics: usize,
}

pub fn corpus_stats(c: &Corpus) -> Result<StatsSummary, CorpusError> {
    if c.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let utts = c.utterances();
    let speakers: BTreeSet<&str> = utts.iter().map(|u| u.speaker.as_str()).collect();
    let parties: BTreeSet<&str> = utts.iter().map(|u| u.party.as_str()).filter(|p| !p.is_empty()).collect();
    let domains: BTreeSet<&str> = utts.iter().filter_map(|u| u.domain_label.as_deref()).collect();
    let subtopics: BTreeSet<(&str, &str)> = utts
        .iter()
        .filter_map(|u| Some((u.domain_label.as_deref()?, u.subtopic_label.as_deref()?)))
        .collect();

    #[derive(Default)]
    struct Doc<'a> {
        utterances: usize,
        words: usize,
        speakers: BTreeSet<&'a str>,
    }
    let mut docs: BTreeMap<&str, Doc> = BTreeMap::new();
    let lengths: Vec<usize> = utts.iter().map(|u| word_count(&u.text)).collect();
    for (u, &len) in utts.iter().zip(&lengths) {
        let d = docs.entry(u.source_doc_id.as_str()).or_default();
        d.utterances += 1;
        d.words += len;
        d.speakers.insert(u.speaker.as_str());
    }
    let doc_lengths: Vec<usize> = docs.values().map(|d| d.words).collect();
    let doc_speakers: Vec<usize> = docs.values().map(|d| d.speakers.len()).collect();

    Ok(StatsSummary {
        utterances: utts.len(),
        speakers: speakers.len(),
        parties: parties.len(),
        documents: docs.len(),
        speakers_per_doc: MeanMax::of(&doc_speakers),
        utterances_per_doc: utts.len() as f64 / docs.len() as f64,
        utterance_length: MeanMax::of(&lengths),
        document_length: MeanMax::of(&doc_lengths),
        domains: domains.len(),
        subtopics: subtopics.len(),
    })
}

/// Split by document: no `source_doc_id` appears on both sides.
///
/// Documents are shuffled with a seeded ChaCha stream; the train side gets
/// `round(train_fraction * docs)` documents, clamped so both sides are
/// non-empty. Utterances keep corpus order within each side.
pub fn split_corpus(c: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let mut docs: Vec<&str> = c.document_ids();
    if docs.len() < 2 {
        return Err(CorpusError::TooFewDocuments(docs.len()));
    }
    docs.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let n_train = ((train_fraction * docs.len() as f64).round() as usize).clamp(1, docs.len() - 1);
    let train_docs: HashSet<&str> = docs[..n_train].iter().copied().collect();

    let (train, test): (Vec<Utterance>, Vec<Utterance>) =
        c.utterances().iter().cloned().partition(|u| train_docs.contains(u.source_doc_id.as_str()));
    Ok((Corpus::new(format!("{}-train", c.name), train)?, Corpus::new(format!("{}-test", c.name), test)?))
}
