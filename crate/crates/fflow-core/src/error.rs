//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimation, training, generation and file IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Fewer samples than required to form the requested statistic.
    #[error("degenerate sample: got {got} rows, need at least {need}")]
    DegenerateSample { got: usize, need: usize },

    /// Finite-difference step must be strictly positive.
    #[error("invalid finite-difference step: delta_theta = {0}, must be > 0")]
    InvalidStep(f64),

    /// Mismatched dimensions between operands.
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e} relative)")]
    NotSymmetric { max_asym: f64 },

    /// Parameter outside its admissible range.
    #[error("invalid parameter {name}: {value}, expected {expected}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// The error model needs a positive FI scale.
    #[error("undefined error model: FI scale j = {0} must be > 0")]
    UndefinedErrorModel(f64),

    /// Sample too small for the requested estimate.
    #[error("insufficient sample: n_sample = {got}, need at least {required} {context}")]
    InsufficientSample {
        got: usize,
        required: usize,
        context: &'static str,
    },

    /// Training was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// Loss became non-finite during training.
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// Malformed container file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A degenerate input made a requested transform undefined.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Error with experiment context attached by the orchestration layer.
    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap the error with experiment context (layer, epoch, ...).
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
