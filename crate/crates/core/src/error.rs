//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by ingestion, validation, linear algebra and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data failed a structural check (dose tie, malformed pair, ...).
    #[error("data validation failed: {0}")]
    Validation(String),

    /// A CSV record could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying CSV reader or writer failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// The rank covariance matrix is singular; the listed columns are constant
    /// or linearly dependent on earlier columns.
    #[error("singular rank covariance matrix (offending columns: {0:?})")]
    SingularCovariance(Vec<usize>),

    /// No perfect matching avoids every forbidden edge.
    #[error("no feasible perfect matching avoids the forbidden edges")]
    NoPerfectMatching,

    /// A design-matrix leverage is numerically equal to one.
    #[error("leverage {value} at row {row} is too close to 1")]
    Leverage { row: usize, value: f64 },

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration size {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: u128 },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
