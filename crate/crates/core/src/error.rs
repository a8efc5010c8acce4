use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A trial hit non-finite state; this is an engine defect, not an escape.
    #[error("trial aborted at t={time:.1}s (seed {seed}): {reason}")]
    TrialAborted { seed: u64, time: f64, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

impl SimError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io { path: path.as_ref().display().to_string(), source }
    }
}
