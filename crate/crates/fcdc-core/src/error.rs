//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any fcdc-core operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: zero-norm input")]
    ZeroNorm { op: &'static str },

    #[error("masked_mean_pool: mask row {row} has no unmasked positions")]
    EmptyMaskRow { row: usize },

    #[error("grad_check: function is not deterministic ({reason})")]
    NonDeterministic { reason: String },

    #[error("{op}: parameter structures do not match ({msg})")]
    StructuralMismatch { op: &'static str, msg: String },

    #[error("corpus line {line}: {msg}")]
    CorpusLine { line: usize, msg: String },

    #[error("no documents")]
    NoDocuments,

    #[error("fine label {fine:?} appears under coarse labels {first:?} and {second:?}")]
    HierarchyViolation {
        fine: String,
        first: String,
        second: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),

    #[error("training aborted at step {step} (config {config_hash}): {source}")]
    TrainAbort {
        step: usize,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
