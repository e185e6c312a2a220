//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by tensor ops, the codec pipeline, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its supported range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A non-finite value was produced or supplied where finite data is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The autodiff graph or optimizer was driven through an invalid sequence
    /// of calls (backward twice, step without gradients, ...).
    #[error("state error: {0}")]
    State(String),

    /// Input data failed validation (class index out of range, empty dataset, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Container bytes do not start with the expected magic.
    #[error("bad magic: {0}")]
    BadMagic(String),

    /// Container version is not supported by this build.
    #[error("unsupported version: {0}")]
    UnsupportedVersion(u8),

    /// Container ended before a declared field was complete.
    #[error("truncated container: {0}")]
    Truncated(String),

    /// Container fields are individually readable but mutually inconsistent.
    #[error("inconsistent container: {0}")]
    Inconsistent(String),

    /// Payload or dictionary bytes cannot be decoded.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
