use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of two tensors (or a tensor and an expected geometry) disagree.
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: String,
        actual: String,
    },

    /// A tensor contains NaN or infinity where finite values are required.
    #[error("non-finite value ({value}) at flat index {index} in {context}")]
    NonFinite {
        context: String,
        index: usize,
        value: f64,
    },

    /// An argument is outside its mathematical domain (e.g. a target outside [0, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested configuration cannot be built (indivisible shapes, bad hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// A layer was driven out of protocol (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// A checkpoint or dataset file is structurally invalid.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Filesystem failure, annotated with the path involved.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(
        axis: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
