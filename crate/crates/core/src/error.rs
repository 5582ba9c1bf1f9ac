use thiserror::Error;

#[derive(Debug, Error)]
pub enum RsttError {
    #[error(transparent)]
    Tensor(#[from] rstt_tensor::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} is not finite")]
    NonFinite { what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RsttError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> RsttError {
    RsttError::Config(msg.into())
}

pub(crate) fn dim_err(op: &'static str, msg: impl Into<String>) -> RsttError {
    RsttError::Tensor(rstt_tensor::Error::Dimension { op, msg: msg.into() })
}
