//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A bitmask does not carry the excitation count of the subspace it was
    /// used with.
    #[error("mask {mask:#b} has {found} excitations, basis expects {expected}")]
    ExcitationViolation { mask: u64, found: u32, expected: u32 },

    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The request exceeds a hard size guard (memory or runtime).
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A density-matrix operation is not available in the current
    /// representation (e.g. an excitation-breaking channel on a
    /// subspace-block matrix).
    #[error("representation error: {0}")]
    Representation(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical quantity that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }

    pub fn representation(msg: impl Into<String>) -> Self {
        Error::Representation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
