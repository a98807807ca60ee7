use thiserror::Error;

#[derive(Debug, Error)]
pub enum FotError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point {point} outside basis domain {domain}")]
    Domain { point: f64, domain: &'static str },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Validity(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("solver did not converge: {message} (iterations={iterations}, residual={residual:e})")]
    Convergence {
        message: String,
        iterations: usize,
        residual: f64,
        residual_trace: Vec<f64>,
    },

    #[error("optimization diverged at outer iteration {iteration}: {message}")]
    Diverged {
        message: String,
        iteration: usize,
        objective_trace: Vec<f64>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FotError {
    /// Process exit code: 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            FotError::NonFinite(_) | FotError::Convergence { .. } | FotError::Diverged { .. } => 3,
            FotError::Io(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, FotError>;
