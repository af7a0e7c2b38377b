use snic_nn::NnError;

/// Errors raised by the compression, evaluation and segmentation pipelines.
///
/// The variants map onto the command-line exit-code taxonomy: bad inputs,
/// model/checkpoint problems, and integrity failures of a bitstream.
#[derive(Debug, thiserror::Error)]
pub enum SnicError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<NnError> for SnicError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(io) => SnicError::Io(io),
            other => SnicError::Model(other.to_string()),
        }
    }
}

impl From<image::ImageError> for SnicError {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => SnicError::Io(io),
            other => SnicError::Input(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, SnicError>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SnicError::Input(msg.into()))
}
