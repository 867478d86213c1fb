//! Crate-wide error type.
//!
//! Variants are grouped by how callers react to them: argument errors are
//! caller bugs or bad CLI input, format errors carry the byte offset of the
//! first inconsistency in a container file, and `TrainingDiverged` names the
//! epoch where the loss stopped being finite.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration supplied by the caller.
    #[error("argument error: {0}")]
    Argument(String),

    /// A configuration the artifact deliberately does not support.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Input that makes the requested quantity undefined (e.g. SNR of a
    /// zero-power signal).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Tensor/layer shape mismatch, reported at model-build time.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed container file; `offset` is the byte position of the first
    /// inconsistency.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    /// Numeric range violation detected by a debug-mode check.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }

    /// Process exit code for the CLI: 2 argument, 3 format, 4 diverged.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_)
            | Error::Unsupported(_)
            | Error::DegenerateInput(_)
            | Error::Shape(_) => 2,
            Error::Format { .. } => 3,
            Error::TrainingDiverged { .. } => 4,
            Error::Numeric(_) | Error::Io(_) => 1,
        }
    }
}
