use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point {0:?} has no preimage in the plane")]
    NoPreimage([f64; 3]),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("design of strength {strength} fails exactness at degree {degree} (residual {residual:.3e})")]
    DesignValidation {
        strength: usize,
        degree: usize,
        residual: f64,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
