use thiserror::Error;

/// Errors raised by the geometry, simulation, training and bridge code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value while evaluating {0}")]
    Evaluation(String),

    #[error("frame is singular at the base point (|det| = {det:e})")]
    SingularFrame { det: f64 },

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("path diverged at step {step}")]
    Divergence { step: usize },

    #[error("non-finite loss at iteration {iteration} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        iteration: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("no convergence after {iterations} iterations: {what}")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration key `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Error about one configuration key.
    pub fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigKey {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigKey { .. } | Error::Json(_) | Error::Unsupported(_)
        )
    }

    /// True for errors raised by a numerical failure (blow-up, non-finite loss, ...).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Evaluation(_)
                | Error::Divergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NoConvergence { .. }
                | Error::SingularFrame { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
