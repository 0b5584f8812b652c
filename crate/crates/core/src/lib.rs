//! Open and axial coding of utterance corpora.
//!
//! The pipeline turns utterances into short open codes (coder ensemble,
//! moderator, similarity-based refinement), groups codes into named
//! categories either by clustering embeddings or by asking a language model
//! directly, scores the resulting category systems, and exports the
//! utterance → code → category hierarchy as a graph.

pub mod axial_clustering;
pub mod axial_llm;
pub mod backend;
pub mod category;
pub mod concept_graph;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod http;
pub mod open_coding;
pub mod text;
