use thiserror::Error;

/// Crate-wide error type.
///
/// The variants are grouped by how a caller should react: argument/shape
/// errors are programming or configuration mistakes, data errors come from
/// files on disk, and `NonFinite`/`EmptyMask` are numeric aborts raised
/// mid-computation.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two containers that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared; the message names where it was first seen.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A masked loss was requested but the mask selects no entries.
    #[error("loss mask selects no entries")]
    EmptyMask,

    /// A checkpoint file is truncated, has a bad magic string, or declares
    /// dimensions that do not match its payload.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Input data is structurally unusable (missing header, empty table, …).
    /// Individually malformed rows are skipped and counted, not errored.
    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
