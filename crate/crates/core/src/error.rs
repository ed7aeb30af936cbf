use thiserror::Error;

/// Errors raised anywhere in the DFT stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("numerical error in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("SCF diverged at iteration {iteration}: |E| = {energy:.3e} Ha")]
    Divergence { iteration: usize, energy: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical { op, detail: detail.into() }
    }
}
