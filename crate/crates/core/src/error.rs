use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ingestion failed for {file}:\n{}", .problems.join("\n"))]
    Ingest { file: String, problems: Vec<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite log-posterior term: {0}")]
    NonFinite(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
