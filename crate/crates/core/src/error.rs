//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("schema error: missing required columns: {}", missing.join(", "))]
    MissingColumns { missing: Vec<String> },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot parse money token {token:?}")]
    MoneyParse { token: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("singular design matrix: column {column} is linearly dependent")]
    SingularMatrix { column: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 3 i/o, 4 schema, 5 numeric/degenerate data.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Csv { .. } => 3,
            Error::MissingColumns { .. } | Error::Schema(_) => 4,
            Error::MoneyParse { .. }
            | Error::InvalidArgument(_)
            | Error::Domain(_)
            | Error::Undefined(_)
            | Error::SingularMatrix { .. } => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
