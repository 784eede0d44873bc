use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFinite { param: String },

    #[error(
        "loss is not reproducible: two evaluations at the same point gave {first:e} and {second:e}"
    )]
    Irreproducible { first: f64, second: f64 },

    #[error("degenerate grid {h}x{w}: both grid dimensions must be at least 2")]
    DegenerateGrid { h: usize, w: usize },

    #[error("edge ({src}, {dst}) is not in the graph")]
    EdgeNotFound { src: usize, dst: usize },

    #[error("mask of size {size} is not aligned with downsample factor {downsample} on a {grid}-cell grid")]
    Alignment {
        size: usize,
        downsample: usize,
        grid: usize,
    },

    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error{}: {msg}", param.as_ref().map(|p| format!(" in parameter `{p}`")).unwrap_or_default())]
    Checkpoint { param: Option<String>, msg: String },

    #[error("AUC is undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad files or malformed data rather than by
    /// numerics or configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Io { .. }
                | Error::Manifest { .. }
                | Error::Checkpoint { .. }
                | Error::Alignment { .. }
        )
    }
}
