use thiserror::Error;

/// Errors produced by problem construction, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("boxes are required for constrained flows")]
    MissingBoxes,

    #[error("initial state is infeasible: agent {agent} has x = {value} outside [{lo}, {hi}]")]
    InfeasibleStart {
        agent: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("formula undefined: {0}")]
    UndefinedFormula(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
