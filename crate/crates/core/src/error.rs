use thiserror::Error;

/// Errors raised across preprocessing, simulation, training and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cutoff: {0}")]
    Cutoff(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("length error: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("cannot stratify split: {0}")]
    Stratification(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("subject {subject}: {reason}")]
    Subject { subject: u32, reason: String },

    #[error("degenerate encoding: class {class} has a zero mean vector")]
    DegenerateEncoding { class: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
