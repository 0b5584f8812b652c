//! Category systems shared by both axial coding paths.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{word_count, MAX_LABEL_WORDS};

#[derive(Debug, Error, PartialEq)]
pub enum CategoryError {
    #[error("category `{0}` has an empty label")]
    EmptyLabel(String),
    #[error("category `{id}` label has {words} words (max {max})", max = MAX_LABEL_WORDS)]
    LabelTooLong { id: String, words: usize },
    #[error("category `{0}` has no utterances")]
    EmptyCategory(String),
    #[error("utterance `{0}` appears in more than one place")]
    Overlap(String),
    #[error("utterance `{0}` is not in the corpus")]
    UnknownUtterance(String),
    #[error("duplicate category id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub label: String,
    pub member_codes: BTreeSet<String>,
    pub member_utterances: BTreeSet<String>,
}

impl Category {
    pub fn size(&self) -> usize {
        self.member_utterances.len()
    }
}

/// One entry of a system's provenance log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Provenance {
    Batch {
        index: usize,
        items: usize,
        categories: usize,
        retries: usize,
        failed: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        dropped_codes: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        truncated_labels: Vec<String>,
    },
    MergeEdge {
        a: String,
        b: String,
        cosine: f64,
        jaccard: f64,
    },
    Merge {
        into: String,
        from: Vec<String>,
    },
    Reassign {
        utterance: String,
        kept: String,
        dropped_from: Vec<String>,
    },
    Removed {
        label: String,
    },
    Named {
        category: String,
        label: String,
        fallback: bool,
        truncated: bool,
    },
    Note {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySystem {
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub categories: Vec<Category>,
    pub unassigned: BTreeSet<String>,
    #[serde(default)]
    pub provenance: Vec<Provenance>,
}

impl CategorySystem {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            params: BTreeMap::new(),
            categories: Vec::new(),
            unassigned: BTreeSet::new(),
            provenance: Vec::new(),
        }
    }

    /// Method name followed by its parameters, e.g. `dbscan(eps=0.3, min_samples=5)`.
    pub fn display_name(&self) -> String {
        if self.params.is_empty() {
            return self.method.clone();
        }
        let params: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect();
        format!("{}({})", self.method, params.join(", "))
    }

    pub fn assigned_count(&self) -> usize {
        self.categories.iter().map(Category::size).sum()
    }

    /// Fraction of `corpus_size` utterances that sit in some category.
    pub fn coverage(&self, corpus_size: usize) -> f64 {
        if corpus_size == 0 {
            return 0.0;
        }
        self.assigned_count() as f64 / corpus_size as f64
    }

    pub fn category_of(&self) -> HashMap<&str, &Category> {
        let mut out = HashMap::new();
        for c in &self.categories {
            for u in &c.member_utterances {
                out.insert(u.as_str(), c);
            }
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Check labels, disjointness and, when `corpus_ids` is given, that every
    /// id belongs to the corpus.
    pub fn validate(&self, corpus_ids: Option<&BTreeSet<String>>) -> Result<(), CategoryError> {
        let mut seen = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for c in &self.categories {
            if !ids.insert(c.id.as_str()) {
                return Err(CategoryError::DuplicateId(c.id.clone()));
            }
            let words = word_count(&c.label);
            if words == 0 {
                return Err(CategoryError::EmptyLabel(c.id.clone()));
            }
            if words > MAX_LABEL_WORDS {
                return Err(CategoryError::LabelTooLong { id: c.id.clone(), words });
            }
            if c.member_utterances.is_empty() {
                return Err(CategoryError::EmptyCategory(c.id.clone()));
            }
            for u in &c.member_utterances {
                if !seen.insert(u.as_str()) {
                    return Err(CategoryError::Overlap(u.clone()));
                }
            }
        }
        for u in &self.unassigned {
            if !seen.insert(u.as_str()) {
                return Err(CategoryError::Overlap(u.clone()));
            }
        }
        if let Some(corpus) = corpus_ids {
            if let Some(u) = seen.iter().find(|u| !corpus.contains(**u)) {
                return Err(CategoryError::UnknownUtterance(u.to_string()));
            }
        }
        Ok(())
    }

    /// Stable pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("category system serializes")
    }
}
