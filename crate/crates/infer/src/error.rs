use std::path::PathBuf;

use dscre_core::instruct::BuildError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("{0}")]
    Spec(String),
    #[error("invalid backend config: {0}")]
    Backend(String),
    #[error("prompt for instance {id}: {source}")]
    Prompt {
        id: String,
        #[source]
        source: BuildError,
    },
    #[error("cache directory {path} is not writable: {source}")]
    CacheUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing run file: {0}")]
    Io(#[from] std::io::Error),
}
