use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("gradient tape does not match the network: {0}")]
    StaleTape(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss in section starting at t={start}, step k={step}")]
    NonFiniteLoss { start: usize, step: usize },

    #[error("state diverged at t={t}")]
    Divergence { t: usize },

    #[error("training diverged: every batch of epoch {epoch} produced a non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("entropy estimate undefined: {0}")]
    Entropy(String),

    #[error("at time index {t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn at_time(self, t: usize) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// True for failures caused by numerics rather than inputs or files.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteGradient { .. }
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::Divergence { .. }
            | Error::TrainingDiverged { .. }
            | Error::Entropy(_) => true,
            Error::AtTime { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
