use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Fit,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("degenerate line: all {0} points coincide")]
    DegenerateLine(usize),

    #[error("line fitting needs at least 2 centroids, got {0}")]
    DegenerateInput(usize),

    #[error(
        "brute-force line search with n={n} centroids and l={lines} lines needs {required} subset evaluations (budget {budget})"
    )]
    BudgetExceeded {
        n: usize,
        lines: usize,
        required: u128,
        budget: u64,
    },

    #[error("ill-conditioned linear program: pivot magnitude {0:e}")]
    IllConditioned(f64),

    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),

    #[error("prototype generation failed on line {line}: {reason}")]
    PrototypeGeneration { line: usize, reason: String },

    #[error("classes {0} and {1} project to the same offset on their line")]
    DegenerateInterval(String, String),

    #[error("line {line}: {message}")]
    Load { line: usize, message: String },

    #[error("record {record}: {message}")]
    Corrupt { record: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("class {class} has {available} instances, needs at least {required}")]
    InsufficientInstances {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("k={k} exceeds the number of prototypes M={m}")]
    KExceedsPrototypes { k: usize, m: usize },

    #[error("unknown instance id {0}")]
    UnknownInstance(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DimensionMismatch { .. }
            | Error::Usage(_)
            | Error::KExceedsPrototypes { .. } => ErrorKind::Usage,
            Error::Load { .. }
            | Error::InsufficientInstances { .. }
            | Error::UnknownInstance(_)
            | Error::SchemaVersion { .. }
            | Error::Corrupt { .. }
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::DegenerateLine(_)
            | Error::DegenerateInput(_)
            | Error::BudgetExceeded { .. }
            | Error::IllConditioned(_)
            | Error::IterationLimit(_)
            | Error::PrototypeGeneration { .. }
            | Error::DegenerateInterval(..) => ErrorKind::Fit,
            Error::Internal(_) => ErrorKind::Internal,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
