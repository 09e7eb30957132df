use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Hawkes branching ratio is at or above one before or after inflation.
    #[error("unstable Hawkes parameters: {0}")]
    Stability(String),
    /// The model cannot be realised, e.g. not enough non-edges to add.
    #[error("infeasible model parameters: {0}")]
    Infeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration and input
    /// problems, 3 for infeasible model parameters.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Stability(_) | Error::Infeasible(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
