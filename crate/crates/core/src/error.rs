use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("outcome count exceeds cap ({count} > {cap})")]
    OutcomeCapExceeded { count: usize, cap: usize },
    #[error("q puts mass {mass:e} on outcome {index} where the reference has none")]
    AbsoluteContinuity { index: usize, mass: f64 },
    #[error("alpha {alpha} exceeds alpha_max {alpha_max}")]
    Infeasible { alpha: f64, alpha_max: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient requested for non-scalar output of shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unknown multiplier `{0}`")]
    UnknownMultiplier(String),
    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    InsufficientBuffer { size: usize, batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("empty log: {0}")]
    EmptyLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
