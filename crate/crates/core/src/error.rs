use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands whose dimensions or channel layout do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    Param(String),
    /// Data that violates a physical constraint (e.g. DoLP above one).
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}
