//! Error type shared across the crate.

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values (sizes, ratios, probabilities, flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Dimension mismatch between tensors, visits, or vocabularies.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values or otherwise unusable numeric state.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Threshold calibration could not produce a valid result.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Evaluation inputs are inconsistent (e.g. missing patients).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Checkpoint file is corrupt, truncated, or has the wrong version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-parsable category, used for the CLI `ERROR(<cat>):` prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Calibration(_) => "calibration",
            Error::Evaluation(_) => "evaluation",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
