use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("inconsistent triangle sides ({a}, {b}, {c})")]
    Triangle { a: f64, b: f64, c: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        max_grad: f64,
    },

    #[error("stage `{stage}` failed{}: {inner}", sample.as_ref().map(|s| format!(" on sample `{s}`")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        sample: Option<String>,
        inner: Box<Error>,
    },

    #[error("{path}: {inner}")]
    File { path: PathBuf, inner: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: msg.into(),
        }
    }

    /// Tags an error with the pipeline stage (and sample) it came from.
    pub fn in_stage(self, stage: &'static str, sample: Option<&str>) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                sample: sample.map(str::to_owned),
                inner: Box::new(e),
            },
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|inner| Error::File {
        path: path.to_owned(),
        inner,
    })
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|inner| Error::File {
            path: parent.to_owned(),
            inner,
        })?;
    }
    std::fs::write(path, bytes).map_err(|inner| Error::File {
        path: path.to_owned(),
        inner,
    })
}
