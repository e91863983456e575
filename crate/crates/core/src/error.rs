use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed problem: {0}")]
    MalformedSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("non-finite {what} at path {path}, step {step}")]
    NonFinite {
        what: &'static str,
        path: usize,
        step: usize,
    },

    #[error("policy emitted a negative increment at step {step}")]
    NegativeIncrement { step: usize },

    #[error("infeasible transition stencil: {0}")]
    InfeasibleStencil(String),

    #[error(
        "exertion iteration did not converge at step {step} after {iterations} sweeps (last change {last_change:e})"
    )]
    NonConvergent {
        step: usize,
        iterations: usize,
        last_change: f64,
    },

    #[error("exertion cycle detected at step {step}, state {state}")]
    ExertionCycle { step: usize, state: usize },

    #[error("instance too large for exhaustive enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("policy not defined: {0}")]
    UndefinedPolicy(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
