use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("alignment mismatch at doc {doc} token {tok}: corpus has {expected:?}, store has {found:?}")]
    Alignment {
        doc: u32,
        tok: u32,
        expected: String,
        found: String,
    },

    #[error("duplicate document id {0}")]
    DuplicateId(u64),

    #[error("duplicate record for doc {doc} token {tok}")]
    DuplicateRecord { doc: u32, tok: u32 },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("zero-norm vector at {0}")]
    ZeroVector(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance is numerically singular ({0}); try a larger regularizer eps")]
    Singular(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "stale artifact {path}: built with config {found}, current config is {expected} (use --force to override)"
    )]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code: 2 for configuration errors, 3 for data errors,
    /// 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Singular(_) | Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
