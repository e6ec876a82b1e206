use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(String),

    #[error("zero reaction vector for reaction {0}")]
    ZeroReaction(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("simulation exceeded the event cap of {0} events")]
    EventCap(u64),

    #[error("observation time {time} lies beyond the trajectory horizon {horizon}")]
    BeyondHorizon { time: f64, horizon: f64 },

    #[error("non-finite LNA state at t = {0}; try more substeps")]
    NonFinite(f64),

    #[error("innovation covariance is not positive definite after jitter escalation")]
    NotPositiveDefinite,

    #[error("non-finite gradient at the current chain state")]
    NonFiniteGradient,

    #[error("no initial draw with finite posterior density after {0} attempts")]
    InitRetries(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.to_string(),
        }
    }
}
