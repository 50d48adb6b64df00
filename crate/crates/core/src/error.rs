use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("Isaacs gap {gap} exceeds tolerance {tol} at {context}")]
    IsaacsGap { gap: f64, tol: f64, context: String },
    #[error("CFL violated: dt = {dt} exceeds limit {limit} (cfl number {cfl})")]
    Cfl { dt: f64, limit: f64, cfl: f64 },
    #[error("non-finite value {value} at {location}")]
    NonFinite { value: f64, location: String },
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl GameError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GameError::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        GameError::Config(msg.into())
    }

    /// Configuration-class errors map to exit code 2, numerical failures to 3.
    pub fn is_numerical(&self) -> bool {
        matches!(self, GameError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, GameError>;
