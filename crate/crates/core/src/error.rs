//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch between tensors or between a model and its input.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value or unparseable config file.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite loss or parameter detected during training.
    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: u64, message: String },

    /// A channel index outside the valid range of the owning submodule.
    #[error("channel index {index} out of range for {len} channels")]
    IndexOutOfRange { index: usize, len: usize },

    /// Witness construction requires the matrix to lie strictly inside the
    /// epsilon-neighborhood of the pruning-invariant set.
    #[error("no witness: min filter norm {dist} is not below epsilon {epsilon}")]
    NoWitness { dist: f64, epsilon: f64 },

    /// The recurrence coefficient f(x, y) has a vanishing denominator.
    #[error("singular denominator in f(x={x}, y={y}) with alpha={alpha}")]
    SingularDenominator { x: f64, y: f64, alpha: f64 },

    /// A recurrence step was requested outside the validity window of the
    /// closed-form coefficient.
    #[error("validity window violated: c={c} outside [{lo}, {hi}]")]
    WindowViolation { c: f64, lo: f64, hi: f64 },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at {path}:{line}: {message}")]
    CsvParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An invariant-suite check failed.
    #[error("verification failure: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Rewrites the step index on a numerical failure; other variants pass through.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical { step, message },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
