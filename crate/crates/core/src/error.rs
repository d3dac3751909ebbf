use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} lies outside the domain")]
    OutOfDomain { index: usize },

    #[error("domains are incompatible: {0}")]
    DomainMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("CFL condition violated: dt = {dt:.3e} exceeds the stable bound {bound:.3e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("monotonicity of the scheme fails: {0}")]
    MonotonicityViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
