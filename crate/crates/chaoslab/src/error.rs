use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("order mismatch: expected {expected}, got {got}")]
    OrderMismatch { expected: usize, got: usize },
    #[error("contraction order {r} out of range for kernel orders {p} and {q}")]
    ContractionRange { r: usize, p: usize, q: usize },
    #[error("tensor of {entries} entries exceeds the configured budget of {budget}")]
    BudgetExceeded { entries: u128, budget: usize },
    #[error("sampling budget exceeded: {draws} draws requested, cap is {cap}")]
    SampleBudgetExceeded { draws: u128, cap: u64 },
    #[error("invalid cell index {index} for grid with {cells} cells")]
    InvalidCell { index: usize, cells: usize },
    #[error("block count {n} does not divide cell count {m}")]
    BlockMismatch { n: usize, m: usize },
    #[error("singular covariance matrix: {0}")]
    SingularCovariance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite coefficient encountered")]
    NonFinite,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
