use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data or configuration.
    #[error("input error: {0}")]
    Input(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model parameter that cannot be used as given.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    /// Operation called on an object in the wrong state (e.g. a non-converged fit).
    #[error("state error: {0}")]
    State(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A marginal fit failed inside a multi-response run. Fits that
    /// finished before the failure are kept.
    #[error("fit of response '{response}' failed: {source}")]
    MarginalFit {
        response: String,
        #[source]
        source: Box<Error>,
        partial: Vec<crate::glmm::FittedGlmm>,
    },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::MarginalFit { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
