use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed textual input (basis strings, files, configs).
    #[error("parse error: {0}")]
    Parse(String),

    /// A numerical routine failed (non-finite values, no convergence of a decomposition).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The optimization problem has an empty feasible set or violates a premise.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The objective is unbounded below on the feasible set.
    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Infeasible(_) | Error::Unbounded(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
