use alloc::string::String;

/// Errors produced by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("column {column} has zero variance on the fitting split")]
    ZeroVariance { column: String },
    #[error("sample size {requested} exceeds available rows {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    TrainingDiverged { epoch: usize },
    #[error("Cholesky factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("not enough training rows: need at least {min}, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("empty quantile level list")]
    EmptyLevels,
    #[error("quantile level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("prediction record does not match nonconformity measure {0}")]
    PredictionKind(&'static str),
    #[error("need at least {min} repetitions, got {got}")]
    TooFewRepetitions { min: usize, got: usize },
    #[error("every repetition was flagged as an outlier")]
    DegenerateCell,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
