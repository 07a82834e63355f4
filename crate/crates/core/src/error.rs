use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("no observations")]
    NoObservations,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("variogram fit: {0}")]
    VariogramFit(String),

    #[error("too few occupied variogram bins: {occupied} (need at least {needed})")]
    TooFewBins { occupied: usize, needed: usize },

    #[error("forward model '{model}': {message}")]
    ForwardModel { model: String, message: String },

    #[error("external model: {message}")]
    External { message: String },

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize).unwrap_or_default();
        Error::Csv {
            row,
            message: e.to_string(),
        }
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable machine-readable tag for CLI error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv { .. } => "csv",
            Error::NoObservations => "no_observations",
            Error::InvalidInput(_) => "invalid_input",
            Error::Factorization(_) => "factorization",
            Error::Singular(_) => "singular",
            Error::VariogramFit(_) => "variogram_fit",
            Error::TooFewBins { .. } => "too_few_bins",
            Error::ForwardModel { .. } => "forward_model",
            Error::External { .. } => "external",
            Error::Optimizer(_) => "optimizer",
            Error::Replicate { .. } => "replicate",
            Error::Json(_) => "json",
        }
    }

    pub fn with_replicate(self, replicate: usize) -> Self {
        Error::Replicate {
            replicate,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
