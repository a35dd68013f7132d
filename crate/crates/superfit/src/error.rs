//! Crate-wide error type. Variants mirror the distinct failure classes the
//! public API promises: shape problems, bad configuration, malformed data
//! files, and checkpoint-specific conditions that callers may match on.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible (matmul inner dims, conv output size,
    /// pooling geometry, label out of class range, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A builder or config carries values outside its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A scalar argument is outside its domain (e.g. non-positive temperature).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Batch statistics cannot be computed (batch norm needs at least two
    /// examples in training mode).
    #[error("batch statistics: {0}")]
    Statistics(String),

    /// API misuse that is detectable at runtime (backward on a non-scalar,
    /// replaying a consumed tape, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// A dataset file does not match its declared binary layout.
    #[error("data format: {0}")]
    Format(String),

    /// A checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint magic mismatch: found {found:02x?}, expected \"SFIT\"")]
    BadMagic { found: [u8; 4] },

    /// A checkpoint was written by an unsupported format version.
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// A checkpoint ended before all declared records were read.
    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    /// A checkpoint's tensor records do not match the declared architecture.
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
