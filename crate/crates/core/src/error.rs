use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A label outside the domain of the loss (e.g. `0.3` for hinge).
    #[error("label {label} is outside the domain of the {loss} loss")]
    LabelDomain { loss: &'static str, label: f64 },

    /// Hinge dual outside the box `0 <= y * alpha <= 1`.
    #[error("infeasible hinge dual: label * alpha = {product} is outside [0, 1]")]
    InfeasibleDual { product: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("infeasible attack spec: {0}")]
    InfeasibleSpec(String),

    #[error("{}:{row}: {msg}", path.display())]
    Load { path: PathBuf, row: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
