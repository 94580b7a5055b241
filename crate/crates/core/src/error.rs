use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// The CLI maps [`Error::Io`] to exit code 2 and everything else to exit
/// code 1, so keep I/O failures in that one variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension mismatch in head {head}: {message}")]
    HeadDimension { head: usize, message: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("index error at position {position}: value {value} not in [0, {bound})")]
    Index {
        position: usize,
        value: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("function is not deterministic: baseline evaluations {first} and {second} differ")]
    Determinism { first: f64, second: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}\nparameter norms:\n{norms}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
        norms: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
