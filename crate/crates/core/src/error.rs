//! Error type shared by every layer of the crate.

use thiserror::Error;

/// Errors raised by the encryption scheme, the packed kernels, the training
/// protocol and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scheme parameters: {0}")]
    Params(String),

    #[error("capacity exceeded: {len} values do not fit in {slots} slots")]
    Capacity { len: usize, slots: usize },

    #[error("depth exhausted in {op}: needs level {need}, ciphertext is at level {have}")]
    DepthExhausted {
        op: &'static str,
        need: usize,
        have: usize,
    },

    #[error("scale mismatch: {lhs:e} vs {rhs:e}")]
    ScaleMismatch { lhs: f64, rhs: f64 },

    #[error("no rotation key for step {0}")]
    MissingRotationKey(i64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("parameter digest mismatch: data was produced under different scheme parameters")]
    DigestMismatch,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
