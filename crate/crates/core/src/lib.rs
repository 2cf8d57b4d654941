//! Zero-shot skill extraction from job postings.
//!
//! The crate covers the whole offline pipeline: a skill taxonomy with
//! Level-2 grouping, LLM-driven synthetic supervision, a sentence filter, a
//! shared-parameter BiLSTM/attention bi-encoder trained with a margin
//! ranking loss, a flat cosine index with thresholded Top-K retrieval and
//! posting-level union aggregation, and the evaluation harness.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod index;
pub mod io;
pub mod syngen;
pub mod taxonomy;
pub mod text;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
