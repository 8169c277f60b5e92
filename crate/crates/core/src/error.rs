use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("non-positive price for {ticker} on {date}")]
    NonPositivePrice { ticker: String, date: String },

    #[error("duplicate date {date} for {ticker}")]
    DuplicateDate { ticker: String, date: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero cross-sectional dispersion on {date}")]
    ZeroDispersion { date: String },

    #[error("lag {tau} outside kernel range 1..={max}")]
    LagOutOfRange { tau: usize, max: usize },

    #[error("{count} non-positive variances (worst {worst:e})")]
    NegativeVariance { count: usize, worst: f64 },

    #[error("model is unstable: spectral radius {0:.4} >= 1")]
    Unstable(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_numerical(),
            e => matches!(
                e,
                Error::NegativeVariance { .. } | Error::Unstable(_) | Error::Numerical(_)
            ),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
