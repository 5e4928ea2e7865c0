use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is disconnected: {0}")]
    Disconnected(String),

    #[error("ball of radius {radius} around vertex {center} is empty")]
    EmptyBall { center: usize, radius: f64 },

    #[error("need at least {needed} radii, got {got}")]
    TooFewRadii { needed: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("domain is disconnected: {0}")]
    DisconnectedDomain(String),

    #[error("invalid capacity problem: {0}")]
    InvalidProblem(String),

    #[error("need at least {needed} valid rows, got {got}")]
    InsufficientRows { needed: usize, got: usize },

    #[error("level set {{field >= {level}}} is empty")]
    EmptyLevelSet { level: f64 },

    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),

    #[error("singularity at vertex {vertex} is not an interior vertex of the domain")]
    SingularityOnBoundary { vertex: usize },

    #[error("shell at radius {radius} (half width {half_width}) is empty")]
    EmptyShell { radius: f64, half_width: f64 },

    #[error("need at least {needed} shells inside the fit window, got {got}")]
    InsufficientShells { needed: usize, got: usize },

    #[error("shell minimum vanishes at radius {radius}")]
    DivisionByZero { radius: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
