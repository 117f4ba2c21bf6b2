use std::path::PathBuf;

use crate::grid::CviState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("index ({i}, {j}) out of range for {nr}x{nz} grid")]
    Index {
        i: usize,
        j: usize,
        nr: usize,
        nz: usize,
    },

    #[error("boundary {value} does not fall on a cell face (nearest face {nearest})")]
    Alignment { value: f64, nearest: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error in `{op}` at tape node {node}")]
    RecordedDomain { op: &'static str, node: usize },

    #[error("non-finite value produced by `{op}` at tape node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("variable belongs to tape generation {found}, active generation is {expected}")]
    TapeMismatch { expected: u64, found: u64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("elliptic solve diverged at sweep {sweep} of step {step}")]
    Divergence {
        step: usize,
        sweep: usize,
        last_good: Option<Box<CviState>>,
    },

    #[error("elliptic problem is singular: no Dirichlet face")]
    Singular,

    #[error("schema error at row {row}: {msg}")]
    Schema { row: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the last finite state to a divergence error raised below the rollout level.
    pub(crate) fn with_last_good(self, state: &CviState) -> Self {
        match self {
            Error::Divergence {
                step,
                sweep,
                last_good: None,
            } => Error::Divergence {
                step,
                sweep,
                last_good: Some(Box::new(state.clone())),
            },
            other => other,
        }
    }
}
