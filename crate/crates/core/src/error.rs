use thiserror::Error;

/// Errors raised by model construction, integration and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("mode index {index} out of range ({count} modes)")]
    ModeIndex { index: usize, count: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("mode kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid initial state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("too many integration steps ({steps}) before t = {t:e}")]
    TooManySteps { steps: usize, t: f64 },

    #[error("truncation error: leakage {leakage:e} exceeds bound {bound:e} at t = {t:e}")]
    Truncation { leakage: f64, bound: f64, t: f64 },

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("unsupported model for this engine: {0}")]
    Unsupported(String),

    #[error("missing recorded series `{0}`")]
    MissingSeries(String),

    #[error("identity `{identity}` does not apply to this model: {reason}")]
    IdentityMismatch { identity: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
