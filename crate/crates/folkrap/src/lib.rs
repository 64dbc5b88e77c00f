//! Folksonomy learning from structured social annotations.
//!
//! The pipeline: ingest user-created saplings, extract expertise features,
//! classify expert users with a self-trained logistic model, build a sparse
//! node-similarity matrix with expert-weighted preferences, learn deep
//! tree-structured folksonomies by relational affinity propagation, and
//! evaluate them against a reference taxonomy with Lexical Precision and
//! Taxonomic Overlap.

pub mod annotation;
pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod pipeline;
pub mod rap;
pub mod similarity;

pub use error::{FolkError, Result};
