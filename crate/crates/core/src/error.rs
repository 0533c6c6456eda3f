use thiserror::Error;

/// Errors raised while building or evaluating problems and simulations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("agent index {index} out of range for {n_agents} agents")]
    AgentOutOfRange { index: usize, n_agents: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid function: {0}")]
    InvalidFunction(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid compensator: {0}")]
    InvalidCompensator(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("lambda component {component} would become {value} (reduce the step size)")]
    LambdaGuard { component: usize, value: f64 },
    #[error("undefined storage: {0}")]
    UndefinedStorage(String),
    #[error("matching instance: {0}")]
    Matching(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
