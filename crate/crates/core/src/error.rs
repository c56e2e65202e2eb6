use std::path::PathBuf;

/// Errors raised by the lab pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the operation's domain (bad id, shape mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// An API called out of order, such as stepping a finished episode.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed file: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
