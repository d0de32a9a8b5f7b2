use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("degenerate gradient: the gradient is identically zero")]
    DegenerateGradient,

    #[error("degenerate column {column}: norm {norm:e} is too small to normalize")]
    DegenerateColumn { column: usize, norm: f64 },

    #[error("attack block (class {class}, attack {attack}) has no usable columns")]
    EmptyBlock { class: usize, attack: usize },

    #[error("unknown block label {0}")]
    UnknownBlock(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
