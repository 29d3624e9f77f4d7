use std::path::PathBuf;

use sod_tensor::TensorError;
use thiserror::Error;

/// Errors surfaced by the network, the checkpoint format and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: {source}")]
    Tensor {
        module: &'static str,
        #[source]
        source: TensorError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    Numerical { epoch: usize, batch: usize, term: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status for the command-line tool: 1 usage or
    /// configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numerical { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

/// Attaches the name of the module a tensor operation failed in.
pub(crate) trait Context<T> {
    fn ctx(self, module: &'static str) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, TensorError> {
    fn ctx(self, module: &'static str) -> Result<T> {
        self.map_err(|source| Error::Tensor { module, source })
    }
}
