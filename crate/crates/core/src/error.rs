use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid state belief: {0}")]
    InvalidState(String),

    #[error("degenerate prior: predictor variance q = {0} must be positive and finite")]
    DegeneratePrior(f64),

    #[error("predictor variance q = {0} is outside the invertible range of trigamma")]
    OutOfRange(f64),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("t = {t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("edge ({origin},{destination}): {source}")]
    AtEdge {
        origin: usize,
        destination: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("missing upstream artifact {}; run `{command}` first", path.display())]
    Dependency { path: PathBuf, command: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_time(self, t: usize) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// Innermost error, with time/edge context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } | Error::AtEdge { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. } | Error::Config(_) | Error::InvalidModel(_) => 2,
            Error::Dependency { .. } => 4,
            Error::Io(_) => 2,
            _ => 3,
        }
    }
}
