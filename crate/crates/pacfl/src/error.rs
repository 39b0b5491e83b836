//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pacfl library.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix, vector, or rank requirement was violated.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input data contained NaN or infinite entries.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Filesystem failure, with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file did not conform to its expected format.
    #[error("parse error: {0}")]
    Parse(String),

    /// A partitioning scheme could not be satisfied.
    #[error("partition error: {0}")]
    Partition(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A protocol invariant was violated (e.g. re-clustering moved old clients).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A numerical routine failed (non-SPD matrix, no convergence).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss.
    #[error("divergence at round {round}, epoch {epoch}: {message}")]
    Divergence {
        round: usize,
        epoch: usize,
        message: String,
    },
}

impl Error {
    /// Wrap an I/O failure with the path it happened on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
