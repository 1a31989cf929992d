use thiserror::Error;

/// Errors surfaced by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("no lock: {0}")]
    NoLock(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unsupported figure: {0}")]
    UnsupportedFigure(String),

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::DataIntegrity(msg.into())
    }

    /// Tags the error with the module that raised it.
    pub fn in_module(self, module: &'static str) -> Self {
        match self {
            e @ Error::Module { .. } => e,
            e => Error::Module {
                module,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, with module tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Module { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
