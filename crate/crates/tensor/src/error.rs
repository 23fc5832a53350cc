use thiserror::Error;

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("{op}: dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl TensorError {
    pub fn dim(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        TensorError::DimensionMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
