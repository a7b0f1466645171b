use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::GraphError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("non-finite {what} at batch {batch}")]
    NonFinite { what: &'static str, batch: usize },
    #[error("missing {what} for: {}", .items.join(", "))]
    Missing { what: &'static str, items: Vec<String> },
    #[error("design matrix is rank deficient; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("optimizer did not converge after {evaluations} evaluations (best deviance {best_deviance})")]
    NotConverged {
        evaluations: usize,
        best_deviance: f64,
        best: Box<crate::mixed::MixedFit>,
    },
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    /// Numerical failures (divergence, non-convergence, singular systems)
    /// as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_numerical(),
            e => matches!(
                e,
                Error::NonFinite { .. } | Error::NotConverged { .. } | Error::Numerical(_) | Error::RankDeficient(_)
            ),
        }
    }

    /// Wraps the error with the identity of the work item that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
