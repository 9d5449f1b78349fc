use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QtError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, QtError>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::QtError::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
