//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix dimension did not match what an operation expects.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// An operation was called while a required precondition did not hold
    /// (e.g. backward without a cached forward pass).
    #[error("invalid state: {0}")]
    State(String),

    /// A CSV row could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Input data violated a structural requirement.
    #[error("validation error: {0}")]
    Validation(String),

    /// A run configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// Training failed; `location` identifies the layer or stage coordinates.
    #[error("training error at {location}: {message}")]
    Train { location: String, message: String },

    /// A checkpoint file could not be written, read or verified.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report error: {0}")]
    Report(String),

    /// Wraps an error from one pipeline stage with the stage name attached.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches a pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration or unusable input files
    /// rather than runtime failures. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Validation(_) => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Helper to run a closure and tag any error with a stage name.
pub fn with_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}
