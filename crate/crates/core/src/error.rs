use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Incompatible tensor/grid shapes; the message names both shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Divergence guard: a NaN or infinity reached a place that must stay finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// Model data does not start with the QDNT magic bytes.
    #[error("bad magic bytes in model data")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    /// Model data ended before all declared fields were read.
    #[error("unexpected end of model data")]
    UnexpectedEnd,
    /// Failure in an external data source backing a trait implementation.
    #[error("data source error: {0}")]
    External(String),
}
