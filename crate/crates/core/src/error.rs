use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("duplicate metronome id `{0}`")]
    DuplicateId(String),

    #[error("assembly must contain at least one metronome")]
    EmptyAssembly,

    #[error("state has {got} metronome slots, assembly has {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite `{component}` at t = {time:.6} s")]
    NonFinite { time: f64, component: String },

    #[error("platform mass matrix lost positive definiteness (det = {det:e})")]
    MassMatrixNotPositive { det: f64 },

    #[error("unknown metronome id `{0}`")]
    UnknownId(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("invalid integration request: {0}")]
    InvalidRequest(String),

    #[error(
        "frequency calibration for `{id}` did not converge to {target} Hz after {iterations} iterations (last {last} Hz)"
    )]
    CalibrationFailed {
        id: String,
        target: f64,
        iterations: usize,
        last: f64,
    },

    #[error("found {found} upward zero crossings, need at least {required}")]
    TooFewCrossings { found: usize, required: usize },

    #[error("peak amplitude {peak:e} rad is below the noise floor; metronome looks stopped")]
    BelowNoiseFloor { peak: f64 },

    #[error("phase series do not overlap in time")]
    EmptyOverlap,

    #[error("need {needed:.3} s of data, have {available:.3} s")]
    InsufficientData { needed: f64, available: f64 },

    #[error("cannot decode a bit from an unlocked report")]
    NotLocked,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
