use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum DilError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible capped simplex: cap {cap} with {n} samples (cap * n must be >= 1)")]
    Infeasible { cap: f64, n: usize },

    #[error("regularized solve failed, condition estimate {condition:.3e}; increase beta")]
    Singular { condition: f64 },

    #[error("class {class} is absent from the sample (sub-population mass {mass})")]
    AbsentClass { class: usize, mass: f64 },

    #[error("non-finite training objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("selection acceptance rate {rate:.3e} below threshold after {draws} draws (r = {r})")]
    AcceptanceStalled { rate: f64, draws: u64, r: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DilError>;
