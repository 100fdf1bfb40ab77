use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("vertex {0} has no incident faces")]
    IsolatedVertex(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("singular blended transform at vertex {0}")]
    SingularTransform(usize),
    #[error("point {index} has non-positive depth {depth}")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("missing keypoint `{0}`")]
    MissingKeypoint(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data, arguments or configuration.
    Validation,
    /// An optimizer or linear solve failed.
    Solver,
    /// Reading or writing files failed.
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.root() {
            Error::Solver(_) | Error::NonFinite { .. } | Error::SingularTransform(_) => {
                ErrorKind::Solver
            }
            Error::Io { .. } => ErrorKind::Io,
            Error::Image(image::ImageError::IoError(_)) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    /// Innermost error after peeling `Context` layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
