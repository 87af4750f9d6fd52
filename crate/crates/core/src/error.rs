//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; panics are reserved for
//! internal invariant breaches (debug assertions), never for bad input.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of its documented range.
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    /// Matrix or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input values violate a construction invariant (non-finite entries,
    /// out-of-range indices, duplicate coordinates).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The computation cannot proceed on this input (rank collapse,
    /// singular sketch, empty sampling distribution).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A size or search cap was exceeded.
    #[error("cap exceeded: {0}")]
    CapExceeded(String),

    /// A build produced an artifact that failed its own validation and
    /// retries were exhausted.
    #[error("validation failed after {attempts} attempt(s): {detail}")]
    ValidationFailed { attempts: usize, detail: String },

    /// Malformed data on ingest or container decode. `line` is 1-based
    /// where applicable.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Container version or type tag unknown to this build.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_parameter(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParameter { name, detail: detail.into() }
    }
}
