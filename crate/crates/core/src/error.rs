use thiserror::Error;

/// Errors raised by tree tensor network operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtnError {
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("edge {0} is a leaf edge")]
    LeafEdge(usize),

    #[error("unknown qudit {0}")]
    UnknownQudit(usize),

    #[error("state is not in canonical form")]
    NotCanonical,

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("dense size {required} exceeds budget {budget}")]
    BudgetExceeded { required: usize, budget: usize },

    #[error("qudits {0} and {1} are not on {2}")]
    NotAdjacent(usize, usize, &'static str),

    #[error("lateral weight {0:.3e} is too small to detach")]
    CorruptWeights(f64),

    #[error("inconsistent measurement: all outcome probabilities vanish")]
    InconsistentMeasurement,

    #[error("invalid measurement pattern: {0}")]
    InvalidPattern(String),

    #[error("energy increased by {increase:.3e} at step {step}")]
    EnergyIncrease { step: usize, increase: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type TtnResult<T> = Result<T, TtnError>;
