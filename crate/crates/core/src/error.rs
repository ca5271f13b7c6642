//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A matrix or vector did not have the shape required by the operation.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An argument was outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The iterative solver produced a non-finite objective.
    #[error("solver diverged at iteration {iteration}: objective = {objective}")]
    Diverged { iteration: usize, objective: f64 },

    /// The unfolded network produced non-finite values.
    #[error("non-finite values in network layer {layer}")]
    NonFiniteLayer { layer: usize },

    /// Training could not make progress.
    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data, checkpoint, or config file failed to parse.
    #[error("parse error in {path} (line {line}): {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
