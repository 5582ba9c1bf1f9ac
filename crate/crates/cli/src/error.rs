use rstt::RsttError;
use thiserror::Error;

/// A failure carrying the process exit code it maps to.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Bad arguments, configuration, paths or input files.
    pub const USAGE: i32 = 2;
    /// Non-finite values during training or inference.
    pub const NUMERIC: i32 = 3;
    /// A verification check exceeded its tolerance.
    pub const VERIFY: i32 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: Self::USAGE, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        CliError { code: Self::VERIFY, message: message.into() }
    }
}

impl From<RsttError> for CliError {
    fn from(e: RsttError) -> Self {
        let code = match &e {
            RsttError::NonFinite { .. } | RsttError::Tensor(rstt_tensor::Error::NonFinite { .. }) => CliError::NUMERIC,
            _ => CliError::USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<rstt_tensor::Error> for CliError {
    fn from(e: rstt_tensor::Error) -> Self {
        RsttError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
