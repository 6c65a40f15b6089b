use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameters or experiment setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// An index or count fell outside its permitted range.
    #[error("range error: {0}")]
    Range(String),

    /// Operand shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Zero norms, NaN/Inf intermediates, diverging losses.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("svd did not converge after {sweeps} sweeps (relative off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line tool: 2 for numeric failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::NoConvergence { .. } => 2,
            _ => 1,
        }
    }
}
