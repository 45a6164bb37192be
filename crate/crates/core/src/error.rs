use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for domain of cardinality {cardinality}")]
    IndexOutOfRange { index: usize, cardinality: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("reward undefined: f = {f} with threshold {threshold} makes the denominator non-positive")]
    RewardDomain { f: f64, threshold: f64 },

    #[error("coordinate {coordinate} has value exactly 0; octant undefined")]
    UndefinedOctant { coordinate: usize },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error(
        "enumeration of {points} grid points exceeds the budget of {budget}; \
         use sampling-based estimation instead"
    )]
    BudgetExceeded { points: f64, budget: u64 },

    #[error("class label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite {what} at sample {sample}")]
    NonFinite { what: &'static str, sample: usize },

    #[error("shape mismatch in `{block}`: {detail}")]
    Shape { block: String, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
