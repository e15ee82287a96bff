use thiserror::Error;

/// Everything that can go wrong while building, evolving or serializing a
/// simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("layout too large: {0}")]
    LayoutTooLarge(String),

    #[error("dense conversion is limited to dimension {limit}, got {dim}")]
    DenseTooLarge { dim: usize, limit: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("{qubit} frequency {freq_ghz} GHz is outside its tuning range [{min_ghz}, {max_ghz}] GHz")]
    OutOfRange {
        qubit: String,
        freq_ghz: f64,
        min_ghz: f64,
        max_ghz: f64,
    },

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("overlapping simultaneous flux pulses on {0}")]
    OverlappingFlux(String),

    #[error("sample time {time_us} µs outside schedule span [0, {span_us}] µs")]
    SampleOutOfRange { time_us: f64, span_us: f64 },

    #[error("step size underflow at t = {0} µs")]
    StepUnderflow(f64),

    #[error("state leaves the single-excitation subspace: {0}")]
    LeavesSubspace(String),

    #[error("job {index}: {source}")]
    Job {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input (exit code 2 in the CLI) rather
    /// than failures during a run.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Validation { .. }
            | Error::OutOfRange { .. }
            | Error::UnknownMode(_)
            | Error::UnknownSlot(_)
            | Error::InvalidSequence(_)
            | Error::OverlappingFlux(_)
            | Error::Parse { .. }
            | Error::Usage(_) => true,
            Error::Job { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
