use std::path::PathBuf;

use crate::dsl::DslError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Dsl(#[from] DslError),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing input artifact `{}`", .0.display())]
    MissingArtifact(PathBuf),

    #[error("I/O error on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) | Error::Shape { .. } => 4,
            Error::Data(_)
            | Error::Dsl(_)
            | Error::MissingArtifact(_)
            | Error::Io { .. }
            | Error::Csv(_) => 3,
        }
    }
}
