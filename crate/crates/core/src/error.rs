use thiserror::Error;

/// Errors produced anywhere in the operator stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values, solver non-convergence, eigensolver failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("corrupt or incompatible file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing dataset: {0}")]
    MissingDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures that the CLI reports with the numerical exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
