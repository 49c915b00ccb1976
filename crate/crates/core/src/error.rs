use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("insufficient history: need {needed}, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("invalid thresholds: tau_low={low} must be < tau_high={high}, both in [-1, 1]")]
    InvalidThresholds { low: f64, high: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ineligible: {0}")]
    Ineligible(String),

    #[error("checkpoint format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("missing checkpoints: {0}")]
    MissingCheckpoints(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{pass} failed for seed {seed}: {source}")]
    Pass {
        pass: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_pass(self, pass: &'static str, seed: u64) -> Self {
        Error::Pass {
            pass,
            seed,
            source: Box::new(self),
        }
    }
}
