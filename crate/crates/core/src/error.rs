use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `B^T P^T` vanishes, so the input-bound program has no finite optimum.
    #[error("control input has no effect on the certificate (B^T P^T = 0)")]
    ControlIneffective,

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("simulation diverged at t = {time} (last finite state {last_state:?})")]
    Diverged { time: f64, last_state: Vec<f64> },

    #[error("plot data is only produced for two-dimensional systems (n = {0})")]
    UnsupportedDimensionForPlots(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
