use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch { op: &'static str, left: String, right: String },

    #[error("vectors and matrices must have at least one element")]
    Empty,

    #[error("matrix is singular: inversion residual {residual:e} exceeds {tolerance:e}")]
    Singular { residual: f64, tolerance: f64 },

    #[error("eigen-solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("numeric overflow in {0}")]
    Overflow(&'static str),

    #[error("invalid segment plan: {0}")]
    InvalidPlan(String),

    #[error("sequence has {sequence} steps but the segment plan covers {plan}")]
    LengthMismatch { sequence: usize, plan: usize },

    #[error("index {index} outside 0..{len} in {what}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("feature column {column} is constant (zero variance)")]
    ConstantFeature { column: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, update {update}")]
    Diverged { epoch: usize, update: usize },

    #[error("parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn mismatch(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
