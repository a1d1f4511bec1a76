//! Chunked diagram-to-circuit text classification.
//!
//! Sentences are rewritten into tagged token streams, split into short
//! chunks, typed with a pregroup lexicon and compiled into shallow circuits
//! whose sentence wire is read out as a Bloch vector. Two classifiers sit on
//! top of the resulting quantum tokens: a mean-pooled density classifier with
//! label prototypes, and a small Transformer over the Bloch-vector sequence.
//! The [`explain`] module holds the confidence, attribution and intervention
//! metrics computed against both.

pub mod baseline;
pub mod error;
pub mod explain;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod pregroup;
pub mod qsim;
pub mod seq_model;
pub mod textprep;

pub use error::{Error, Result};

/// Number of sentiment classes (negative, neutral, positive).
pub const NUM_CLASSES: usize = 3;
