//! Layered utterance → code → category graph with DOT and JSON export.
//!
//! Edges point from child to parent. Node ids are `utt:<id>`, `code:<code>`
//! and `cat<level>:<category id>`. A code whose utterances fall into more
//! than one first-level category is split into one node per category,
//! `code:<code>#<category id>` (or `#unassigned`), so every node keeps a
//! single parent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::CategorySystem;
use crate::open_coding::CodedUtterance;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("level {level} references unknown utterance `{id}`")]
    DanglingUtterance { level: usize, id: String },
    #[error("duplicate utterance `{0}` in coded input")]
    DuplicateUtterance(String),
    #[error("level {level} category `{category}` spans several parent categories")]
    SplitChild { level: usize, category: String },
    #[error("edge endpoint `{0}` is not a node")]
    DanglingEdge(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("edge {from} -> {to} does not go up one layer")]
    BadEdge { from: String, to: String },
    #[error("unsupported export format `{0}` (expected dot or json)")]
    UnsupportedFormat(String),
    #[error("graph json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Utterance,
    Code,
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: NodeType,
    /// Category level, starting at 1. Zero for utterances and codes.
    pub level: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Node {
    /// Position in the layer order: utterances 0, codes 1, level-k categories k+1.
    pub fn layer(&self) -> usize {
        match self.kind {
            NodeType::Utterance => 0,
            NodeType::Code => 1,
            NodeType::Category => self.level + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMeta {
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptGraph {
    pub schema_version: u32,
    pub levels: Vec<LevelMeta>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

pub const FLAG_UNASSIGNED: &str = "unassigned";
pub const FLAG_UNCODABLE: &str = "uncodable";

fn utt_id(id: &str) -> String {
    format!("utt:{id}")
}

fn cat_id(level: usize, id: &str) -> String {
    format!("cat{level}:{id}")
}

/// Build the graph from coded utterances and one category system per level.
pub fn build_graph(coded: &[CodedUtterance], systems: &[&CategorySystem]) -> Result<ConceptGraph, GraphError> {
    let mut seen = BTreeSet::new();
    for c in coded {
        if !seen.insert(c.utterance_id.as_str()) {
            return Err(GraphError::DuplicateUtterance(c.utterance_id.clone()));
        }
    }
    // Category of each utterance, per level.
    let mut owner: Vec<HashMap<&str, &str>> = Vec::new();
    for (li, s) in systems.iter().enumerate() {
        let mut map = HashMap::new();
        for c in &s.categories {
            for u in &c.member_utterances {
                if !seen.contains(u.as_str()) {
                    return Err(GraphError::DanglingUtterance { level: li + 1, id: u.clone() });
                }
                map.insert(u.as_str(), c.id.as_str());
            }
        }
        owner.push(map);
    }

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    // code -> first-level category (None = unassigned) -> utterances
    let mut codes: BTreeMap<&str, BTreeMap<Option<&str>, Vec<&str>>> = BTreeMap::new();
    for c in coded {
        let first = owner.first().and_then(|m| m.get(c.utterance_id.as_str()).copied());
        let mut flags = Vec::new();
        if !systems.is_empty() && first.is_none() {
            flags.push(FLAG_UNASSIGNED.to_string());
        }
        if c.code().is_none() {
            flags.push(FLAG_UNCODABLE.to_string());
        }
        nodes.push(Node { id: utt_id(&c.utterance_id), kind: NodeType::Utterance, level: 0, label: c.text.clone(), flags });
        if let Some(code) = c.code() {
            codes.entry(code).or_default().entry(first).or_default().push(&c.utterance_id);
        }
    }

    for (code, by_cat) in &codes {
        let split = by_cat.len() > 1;
        for (cat, utts) in by_cat {
            let id = if split {
                format!("code:{code}#{}", cat.unwrap_or(FLAG_UNASSIGNED))
            } else {
                format!("code:{code}")
            };
            let flags = if cat.is_none() && !systems.is_empty() { vec![FLAG_UNASSIGNED.to_string()] } else { Vec::new() };
            nodes.push(Node { id: id.clone(), kind: NodeType::Code, level: 0, label: code.to_string(), flags });
            for u in utts {
                edges.push(Edge { from: utt_id(u), to: id.clone() });
            }
            if let Some(cat) = cat {
                edges.push(Edge { from: id.clone(), to: cat_id(1, cat) });
            }
        }
    }

    for (li, s) in systems.iter().enumerate() {
        let level = li + 1;
        for c in &s.categories {
            let mut flags = Vec::new();
            if let Some(parent_map) = owner.get(level) {
                let parents: BTreeSet<Option<&str>> =
                    c.member_utterances.iter().map(|u| parent_map.get(u.as_str()).copied()).collect();
                match parents.len() {
                    0 => {}
                    1 => match parents.into_iter().next().flatten() {
                        Some(p) => edges.push(Edge { from: cat_id(level, &c.id), to: cat_id(level + 1, p) }),
                        None => flags.push(FLAG_UNASSIGNED.to_string()),
                    },
                    _ => return Err(GraphError::SplitChild { level, category: c.id.clone() }),
                }
            }
            nodes.push(Node { id: cat_id(level, &c.id), kind: NodeType::Category, level, label: c.label.clone(), flags });
        }
    }

    let g = ConceptGraph {
        schema_version: GRAPH_SCHEMA_VERSION,
        levels: systems.iter().map(|s| LevelMeta { method: s.method.clone(), params: s.params.clone() }).collect(),
        nodes,
        edges,
    };
    g.validate()?;
    Ok(g)
}

impl ConceptGraph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn count(&self, kind: NodeType) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Unique ids, existing endpoints, one parent per node, and every edge
    /// climbing exactly one layer (which also rules out cycles).
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut by_id = HashMap::new();
        for n in &self.nodes {
            if by_id.insert(n.id.as_str(), n).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let mut has_parent = BTreeSet::new();
        for e in &self.edges {
            let from = by_id.get(e.from.as_str()).ok_or_else(|| GraphError::DanglingEdge(e.from.clone()))?;
            let to = by_id.get(e.to.as_str()).ok_or_else(|| GraphError::DanglingEdge(e.to.clone()))?;
            if to.layer() != from.layer() + 1 {
                return Err(GraphError::BadEdge { from: e.from.clone(), to: e.to.clone() });
            }
            if !has_parent.insert(e.from.as_str()) {
                return Err(GraphError::MultipleParents(e.from.clone()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let g: Self = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph concepts {\n  rankdir=BT;\n  node [style=filled, shape=box];\n");
        for n in &self.nodes {
            let colour = match n.kind {
                NodeType::Utterance => "lightgrey",
                NodeType::Code => "palegreen",
                NodeType::Category if n.level == 1 => "khaki1",
                NodeType::Category => "lightblue",
            };
            let style = if n.flags.is_empty() { "filled" } else { "filled,dashed" };
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\", fillcolor={colour}, style=\"{style}\"];",
                dot_escape(&n.id),
                dot_escape(&n.label)
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", dot_escape(&e.from), dot_escape(&e.to));
        }
        out.push_str("}\n");
        out
    }

    /// Render as `dot` or `json`.
    pub fn export(&self, format: &str) -> Result<String, GraphError> {
        match format.to_ascii_lowercase().as_str() {
            "dot" => Ok(self.to_dot()),
            "json" => self.to_json(),
            other => Err(GraphError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Escape text for a double-quoted DOT string.
pub fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}
