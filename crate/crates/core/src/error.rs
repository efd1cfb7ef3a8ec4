use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("truncated frame: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("out-of-order write: frame {frame} slice {slice} after frame {last_frame} slice {last_slice}")]
    Ordering {
        frame: usize,
        slice: usize,
        last_frame: usize,
        last_slice: usize,
    },

    #[error("flow pairing error: {0}")]
    Pairing(String),

    #[error("solver diverged in frame {frame}: {detail}")]
    Divergence { frame: usize, detail: String },

    #[error("decomposition fault: {0}")]
    Decomposition(String),

    #[error("pipeline stage `{stage}` failed after frame {last_good:?}: {source}")]
    Stage {
        stage: &'static str,
        last_good: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error{}: {source}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Io {
        frame: Option<usize>,
        #[source]
        source: io::Error,
    },
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io {
            frame: None,
            source,
        }
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors caused by the input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Format(_)
            | Error::Truncated { .. }
            | Error::NonFinite(_)
            | Error::Pairing(_)
            | Error::Ordering { .. }
            | Error::Io { .. } => true,
            Error::Stage { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Stage { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
