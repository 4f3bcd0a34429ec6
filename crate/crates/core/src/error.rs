use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: wrong lengths, non-square matrices, bad CSV rows.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A parameter is outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The requested variant is not implemented (e.g. a trace moment of order > 4).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Rejection sampling over an integration region accepted too few points.
    #[error("region error: {0}")]
    Region(String),

    /// A replication experiment was configured with too few replicates.
    #[error("insufficient replicates: {0}")]
    InsufficientReplicates(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}
