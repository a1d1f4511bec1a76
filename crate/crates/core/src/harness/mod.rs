//! Corpora, splits, configuration and the end-to-end experiment runner.

pub mod config;
pub mod corpus;
pub mod pipeline;
pub mod synth;

pub use config::ExperimentConfig;
pub use corpus::{apportion, load_corpus, parse_corpus, stratified_split, Corpus, SplitSpec};
pub use pipeline::{run_experiment, Checkpoint, RunOutput, RunReport, Workspace};
pub use synth::{make_synthetic_corpus, swap_clauses, SynthMode, SynthSpec};
