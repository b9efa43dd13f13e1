use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible configuration at row {row}: lower end {lo} exceeds upper end {hi}")]
    Infeasible { row: usize, lo: f64, hi: f64 },

    #[error("degenerate importance weights: the candidate policy puts zero mass on every logged action")]
    DegenerateWeights,

    #[error("problem too large for the exact solver: n*k = {size} exceeds the guard {limit}")]
    GuardViolation { size: usize, limit: usize },

    #[error("{solver} did not converge after {iterations} iterations")]
    NonConvergence { solver: &'static str, iterations: usize },

    #[error("reward bounds required: {0}")]
    MissingBounds(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical routine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::DegenerateWeights)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
