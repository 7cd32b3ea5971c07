//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of inputs disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value or configuration violates a documented invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotSpd(String),

    /// An area with no neighbors was found while building a spatial structure.
    #[error("area {0} has no neighbors")]
    Island(String),

    /// A file failed to parse; carries path, 1-based line and offending item.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    /// Filesystem failure with path context.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The sampler hit an unrecoverable numerical failure mid-run.
    #[error("chain diverged at iteration {iteration}: {msg}")]
    ChainDiverged { iteration: usize, msg: String },
}

impl Error {
    /// Process exit code convention: 1 for validation problems, 2 for
    /// runtime/chain failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ChainDiverged { .. } | Error::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
