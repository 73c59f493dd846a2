use thiserror::Error;

/// Errors raised by the forward model.
///
/// The leading token of each message is a stable code that the CLI and the
/// tests match on.
#[derive(Debug, Error)]
pub enum Error {
    #[error("phantom-too-small: {0}")]
    PhantomTooSmall(String),

    #[error("invalid-map: {0}")]
    InvalidMap(String),

    #[error("incompatible-dimensions: {0}")]
    IncompatibleDimensions(String),

    #[error("invalid-config: {0}")]
    InvalidConfig(String),

    #[error("solver-diverged: non-finite field at step {step}")]
    SolverDiverged { step: usize },

    #[error("event {event}: {source}")]
    Event {
        event: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("attenuation-fit-failed: residual {residual:.4} exceeds 15% of the mid-band target")]
    AttenuationFitFailed { residual: f64 },

    #[error("decimation-ratio: input rate {fs_in} Hz is not an integer multiple of {fs_out} Hz")]
    DecimationRatio { fs_in: f64, fs_out: f64 },

    #[error("bad-tensor-header: {0}")]
    BadTensorHeader(String),

    #[error("checkpoint-incompatible: {0}")]
    CheckpointIncompatible(String),

    #[error("calibration-degenerate: {0}")]
    CalibrationDegenerate(String),

    #[error("invalid-input: {0}")]
    InvalidInput(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short code (the part before the colon in the message).
    pub fn code(&self) -> &'static str {
        match self {
            Error::PhantomTooSmall(_) => "phantom-too-small",
            Error::InvalidMap(_) => "invalid-map",
            Error::IncompatibleDimensions(_) => "incompatible-dimensions",
            Error::InvalidConfig(_) => "invalid-config",
            Error::SolverDiverged { .. } => "solver-diverged",
            Error::Event { source, .. } => source.code(),
            Error::AttenuationFitFailed { .. } => "attenuation-fit-failed",
            Error::DecimationRatio { .. } => "decimation-ratio",
            Error::BadTensorHeader(_) => "bad-tensor-header",
            Error::CheckpointIncompatible(_) => "checkpoint-incompatible",
            Error::CalibrationDegenerate(_) => "calibration-degenerate",
            Error::InvalidInput(_) => "invalid-input",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
