use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedWav { path: PathBuf, detail: String },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("no codec binary found: {0}")]
    CodecBinaryMissing(String),

    #[error("codec process `{program}` failed (status {status:?}): {stderr}")]
    CodecProcess {
        program: String,
        status: Option<i32>,
        stderr: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown config key in override: {0}")]
    UnknownConfigKey(String),

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("empty score list for {0}")]
    EmptyScores(&'static str),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
