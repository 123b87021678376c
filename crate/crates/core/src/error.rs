use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The exponential nonlinearity was evaluated beyond its overflow cap.
    #[error("saturation: |u| = {value} exceeds cap {cap}")]
    Saturation { value: f64, cap: f64 },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("numerical instability at t = {time}: {detail}")]
    Instability { time: f64, detail: String },

    /// Audited scaling derivatives disagree in sign below the threshold.
    #[error("sign inconsistency among audited K values: {0:?}")]
    Inconsistency(Vec<(String, f64)>),

    #[error("invariant violated: {0}")]
    HardFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Instability { .. } | LabError::Saturation { .. } => 3,
            LabError::Inconsistency(_) | LabError::HardFailure(_) => 4,
            LabError::Convergence(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
