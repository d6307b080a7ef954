use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what}: sequence too short (needed {needed}, got {got})")]
    SequenceTooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{what}: empty sequence")]
    EmptySequence { what: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter '{param}'")]
    NumericFault { param: String },

    #[error("wav file not found: {path}")]
    WavMissing { path: String },

    #[error("malformed wav header in {path}: {detail}")]
    WavMalformed { path: String, detail: String },

    #[error("unsupported wav encoding in {path}: {detail}")]
    WavUnsupported { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("config error at {path}:{line}: {detail}")]
    Config {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("manifest error in {path}: {detail}")]
    Manifest { path: String, detail: String },

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
