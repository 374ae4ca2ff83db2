use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("proposal error: {0}")]
    Proposal(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate variable: {0}")]
    DegenerateVariable(String),

    #[error("chain aborted at epoch {epoch}: {source}")]
    ChainAborted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
