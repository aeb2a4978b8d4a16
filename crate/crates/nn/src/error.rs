use thiserror::Error;

/// Errors raised by the network engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid layer configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` is infeasible: {reason}")]
    InfeasibleStage { stage: String, reason: String },

    #[error("backward called without a cached forward pass")]
    MissingForwardCache,

    #[error("negative entry {value} at index {index} in a probability distribution")]
    NegativeProbability { index: usize, value: f64 },

    #[error(
        "graph is in training mode with stochastic layers; switch to Mode::Eval to freeze dropout and batch normalization"
    )]
    NonDeterministic,

    #[error("parameter block mismatch: {0}")]
    ParamMismatch(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
