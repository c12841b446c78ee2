use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("signal too short: {len} samples, need at least {need}")]
    EmptySpectrogram { len: usize, need: usize },
    #[error("unsupported audio format: {0}")]
    AudioFormat(String),
    #[error("silent signal: {0}")]
    Silent(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
