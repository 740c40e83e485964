use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("basis transform P({bin}) is singular")]
    SingularP { bin: usize },

    #[error("weighted covariance at bin {bin}, column {column} is singular after regularization")]
    SingularWeightedCovariance { bin: usize, column: usize },

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("channel {channel} has {got} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {reference} reference samples vs {estimate} estimate samples")]
    LengthMismatch { reference: usize, estimate: usize },

    #[error("reference signal is identically zero")]
    ZeroReference,

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelCountMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported WAV format: {0}")]
    UnsupportedWav(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
