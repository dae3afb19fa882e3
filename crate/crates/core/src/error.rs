use std::fmt;

use thiserror::Error;

use crate::trainer::AbortedRun;

/// Which side of the bipartite graph an index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::User => f.write_str("user"),
            Side::Item => f.write_str("item"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {side} index {index} outside declared range 0..{bound}")]
    IndexOutOfRange {
        path: String,
        line: usize,
        side: Side,
        index: usize,
        bound: usize,
    },

    #[error("{0}: no interactions found")]
    EmptyFile(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("holdout ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),

    #[error("dataset has no training edges")]
    NoTrainEdges,

    #[error("batch size must be at least 1")]
    EmptyBatch,

    #[error("user {user} has interacted with all {num_items} items; no valid negative exists")]
    NoValidNegative { user: usize, num_items: usize },

    #[error("sparsity {0} outside [0, 1)")]
    InvalidSparsity(f64),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite gradient {value} at row {row}, column {col}")]
    NonFiniteGradient { row: usize, col: usize, value: f64 },

    #[error("non-finite loss {value} on triple (user {user}, pos {pos}, neg {neg})")]
    NonFiniteLoss {
        user: usize,
        pos: usize,
        neg: usize,
        value: f64,
    },

    #[error("iteration {t} outside schedule range 0..={t_end}")]
    IterationOutOfRange { t: usize, t_end: usize },

    #[error("cannot grow {requested} positions: only {eligible} eligible inactive positions")]
    GrowExceedsEligible { requested: usize, eligible: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at iteration {}: {}", .0.iteration, .0.cause)]
    Aborted(Box<AbortedRun>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
