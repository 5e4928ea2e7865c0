use thiserror::Error;

/// Exit code contract: 0 all checks pass, 1 a check failed, 2 configuration
/// error, 3 solver non-convergence.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 3,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<greenlab::Error> for CliError {
    fn from(e: greenlab::Error) -> Self {
        match e {
            greenlab::Error::NonConvergence { .. } | greenlab::Error::LinearSolve(_) => CliError::Solver(e.to_string()),
            greenlab::Error::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
