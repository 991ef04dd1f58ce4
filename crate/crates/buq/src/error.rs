//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input tensor shape does not match what the model expects.
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: String, got: String },

    /// A forward pass produced a non-finite activation.
    #[error("numeric overflow: non-finite value in {context}")]
    NumericOverflow { context: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// Malformed binary or CSV input. `offset` is the byte offset (binary)
    /// or line number (CSV) at which parsing failed.
    #[error("format error in {path:?} at offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Not enough records to compute a statistic.
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Posterior density is zero everywhere (impossible observations).
    #[error("degenerate posterior: unnormalized density is zero everywhere")]
    DegeneratePosterior,

    /// Mutual information came out below -1e-9 before clamping, which
    /// indicates a broken sample matrix rather than float noise.
    #[error("internal consistency: mutual information {value} < -1e-9 before clamp")]
    InternalConsistency { value: f64 },

    /// Two table rows that must share keys do not.
    #[error("key mismatch: expected {expected}, got {got}")]
    KeyMismatch { expected: String, got: String },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
