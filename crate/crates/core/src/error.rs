use std::path::PathBuf;

use sgdvit_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Config { key: key.into(), msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CoreError::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config { .. } => 2,
            CoreError::Data(_) | CoreError::Io { .. } => 3,
            CoreError::Numerical(_) => 4,
            CoreError::Tensor(TensorError::Io(_) | TensorError::Format(_)) => 3,
            CoreError::Tensor(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
