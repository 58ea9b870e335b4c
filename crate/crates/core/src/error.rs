use thiserror::Error;

/// Errors raised by the solvers and the command-line front-end.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, mismatched grids, malformed input files.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative solver ran out of iterations.
    #[error(
        "{what} did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    /// A time integration produced non-finite values.
    #[error("divergence in {what} at step {step}")]
    Divergence { what: String, step: usize },

    /// A computed quantity violated an identity that holds by construction.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit status used by the CLI: 1 for numerical failures, 2 for configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::Divergence { .. } | Error::Integrity(_) => 1,
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
