use thiserror::Error;

/// Errors produced anywhere in the defect pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("inconsistent data: {0}")]
    Data(String),

    /// An optimiser or estimator gave up. `best` carries the best iterate
    /// found, when one exists.
    #[error("fit failed: {reason}")]
    Fit {
        reason: String,
        best: Option<Vec<f64>>,
    },

    #[error("chain initialisation failed: {0}")]
    Initialization(String),

    #[error("diagnostic unavailable: {0}")]
    Diagnostic(String),

    #[error("image: {0}")]
    Image(String),

    #[error("external model: {0}")]
    External(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !($cond) {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
