use thiserror::Error;

/// Errors produced anywhere in the synthesis or simulation pipeline.
#[derive(Debug, Error)]
pub enum RompcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unstable argument: {0}")]
    Unstable(String),

    #[error("not converged after {iterations} iterations: {what} (best estimate {estimate:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        estimate: f64,
    },

    #[error("unstabilizable pair: {0}")]
    Unstabilizable(String),

    #[error("unbounded constraint set: {0}")]
    UnboundedSet(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("vertex enumeration cap exceeded: {count} vertices > cap {cap}; decompose the set per factor or over-approximate it by a box")]
    VertexCap { count: u128, cap: u128 },

    #[error("optimization problem infeasible: {0}")]
    Infeasible(String),

    #[error("linear program unbounded: {0}")]
    LpUnbounded(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RompcError>;

impl RompcError {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        RompcError::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RompcError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        RompcError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, msg: impl Into<String>) -> Self {
        RompcError::Parse {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }
}
