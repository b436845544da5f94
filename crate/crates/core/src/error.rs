use thiserror::Error;

/// Errors produced by tensor, state and trajectory operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Axis extents that were required to match do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument is structurally invalid (bad permutation, bad site index, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dense oracle or reconstruction was requested for a system too large
    /// to hold in memory.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// A numerical consistency check failed (non-real probability, NaN, norm
    /// collapse). These indicate corruption rather than user error.
    #[error("numerical consistency failure: {0}")]
    Numerical(String),

    /// I/O or format failure while reading/writing a state snapshot.
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
