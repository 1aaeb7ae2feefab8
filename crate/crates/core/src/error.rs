use thiserror::Error;

#[derive(Debug, Error)]
pub enum PsgdError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate step: {0}")]
    DegenerateStep(String),

    #[error("group element is not invertible: {0}")]
    NotInvertible(String),

    #[error("dense oracle limited to n <= {cap}, got n = {n}")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("invalid permutation subgroup: {0}")]
    InvalidGroup(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mismatched groups: {0}")]
    GroupMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PsgdError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(PsgdError::DimensionMismatch { expected, found });
    }
    Ok(())
}
