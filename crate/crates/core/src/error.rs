use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid instance {id}: {message}")]
    Instance { id: String, message: String },

    #[error("unknown relation label(s): {}", .0.join(", "))]
    UnknownRelation(Vec<String>),

    #[error("invalid dependency tree: {0}")]
    Tree(String),

    #[error("missing parse for instance(s): {}", .0.join(", "))]
    MissingParse(Vec<String>),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty bag `{0}`")]
    EmptyBag(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by diverging arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
