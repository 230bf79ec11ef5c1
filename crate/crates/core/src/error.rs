use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix dimensions must be positive (got {rows}x{cols})")]
    ZeroDimension { rows: usize, cols: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid quantizer rate {0} (must be in 1..=32 bits)")]
    InvalidRate(u32),

    #[error("quantizer scale must be positive and finite, got {0}")]
    NonpositiveScale(f64),

    #[error("sparsity {k} invalid for signal length {n}")]
    InvalidSparsity { k: usize, n: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("exhaustive search too large: n={n}, {supports} supports")]
    InstanceTooLarge { n: usize, supports: u128 },

    #[error("side information missing or inconsistent: {0}")]
    MissingSideInformation(String),

    #[error("per-node sensing matrices must be pairwise distinct")]
    SharedMatrix,

    #[error("at least {required} nodes required, got {found}")]
    TooFewNodes { required: usize, found: usize },

    #[error("RIP constant {delta} outside the stable-recovery regime [0, sqrt(2)-1)")]
    InvalidRegime { delta: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed measurement file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DcsError>;
