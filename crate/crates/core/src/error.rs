use jam_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid auction instance: {0}")]
    InvalidInstance(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("enumeration of {count} assignments exceeds the limit of {limit}")]
    SizeLimit { count: u128, limit: u128 },
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
