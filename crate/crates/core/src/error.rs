use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("bad file header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("corrupt {what}: {message}")]
    Corrupt { what: &'static str, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown query `{0}`")]
    UnknownQuery(String),

    #[error("cannot generate {what}: {reason}")]
    CannotGenerate { what: &'static str, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        last_good: Option<Box<crate::dense::EncoderParams>>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
