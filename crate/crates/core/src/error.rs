use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no geometric decay detected (fitted slope {slope})")]
    NoGeometricDecay { slope: f64 },

    #[error("corrupted eigenvector estimate: [z_{agent}]_{agent} = {value} at round {round}")]
    CorruptedEstimate { agent: usize, round: usize, value: f64 },

    #[error("divergence: non-finite state for agent {agent} at round {round}")]
    Divergence { agent: usize, round: usize },

    #[error("diagonal-free weight matrix: sensitivity bound vacuous ({0})")]
    DiagonalFree(String),

    #[error("empty sample buffer for learner {0}")]
    EmptyBuffer(usize),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("trace shape mismatch: {0}")]
    TraceShape(String),

    #[error("{0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
