use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("spatial size {height}x{width} is not divisible by {divisor}")]
    Indivisible { height: usize, width: usize, divisor: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
