use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rules `{first}` and `{second}` (level {level}) both match tokens {start}..{end}")]
    OverlappingRules {
        first: String,
        second: String,
        level: String,
        start: usize,
        end: usize,
    },
    #[error("invalid rule bundle at line {line}: {reason}")]
    BadRule { line: usize, reason: String },
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot parse pregroup type `{0}`")]
    BadType(String),
    #[error("type atom `{0}` has no qubit assignment")]
    UnregisteredTypeAtom(String),
    #[error("circuit has {0} wires, more than the simulator limit")]
    TooManyWires(usize),
    #[error("post-selection norm {0:e} is below the cutoff")]
    ZeroNorm(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    BlochOutOfBall(f64),
    #[error("gradient contains a non-finite entry")]
    NonFiniteGradient,
    #[error("document has no valid chunks")]
    NoValidChunks,
    #[error("class {class} has {found} chunk densities, need at least {needed}")]
    InsufficientChunks {
        class: usize,
        found: usize,
        needed: usize,
    },
    #[error("class {0} is absent from the training split")]
    DegenerateSplit(usize),
    #[error("every position of the sequence is masked")]
    AllMasked,
    #[error("label sequences of the rewritten pair differ")]
    NonEquivalentPair,
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("corpus {0} contains no sentences")]
    EmptyCorpus(PathBuf),
    #[error("class {class} has {count} sentences, need at least {needed} to split")]
    TooFewPerClass {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure stems from the caller's input rather than a
    /// pipeline stage.
    pub fn is_bad_input(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_bad_input(),
            Error::BadRule { .. }
            | Error::InvalidInput(_)
            | Error::BadType(_)
            | Error::Parse { .. }
            | Error::EmptyCorpus(_)
            | Error::TooFewPerClass { .. }
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => true,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

/// Tags errors with the pipeline stage that raised them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
