use thiserror::Error;

/// Errors produced by the separation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular matrix at bin {bin}, frame {frame}")]
    Singular { bin: usize, frame: usize },

    #[error("found {} distinct delay peaks, {wanted} requested (peaks at {found:?} s)", found.len())]
    NotEnoughPeaks { wanted: usize, found: Vec<f64> },

    #[error("rank-deficient projection basis for source {source_index}")]
    RankDeficient { source_index: usize },

    #[error("wav: {message} (byte offset {offset})")]
    Wav { offset: u64, message: String },

    #[error("library file: {0}")]
    Library(String),

    #[error("mix spec: {0}")]
    MixSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
