use thiserror::Error;

/// Errors raised by the simulation and DSP routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("waveform has zero power")]
    ZeroPower,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample rate {sample_rate} Hz cannot represent a cutoff of {cutoff} Hz")]
    SampleRateTooLow { sample_rate: f64, cutoff: f64 },

    #[error("fixed points are complex for b = {0} (b < -1/4)")]
    ComplexFixedPoints(f64),

    #[error("calibration diverged at sample {sample}")]
    Diverged { sample: usize },

    #[error("filter response is near zero at {frequency} cycles/sample")]
    ResponseUndefined { frequency: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl SerError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        SerError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for SerError {
    fn from(e: std::io::Error) -> Self {
        SerError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SerError>;

impl From<csv::Error> for SerError {
    fn from(e: csv::Error) -> Self {
        SerError::Io(e.to_string())
    }
}
