//! Inference client: prompts for the three paradigms, an HTTP backend with
//! an on-disk response cache, and order-preserving batch runs.

mod backend;
mod cache;
mod error;
mod prompt;
mod run;

pub use backend::{extract_answer, BackendConfig, WireFormat};
pub use cache::{cache_key, Cache};
pub use error::InferError;
pub use prompt::{build_prompt, Paradigm, PromptSpec, DEFAULT_SINGLE_WORD_REQUEST, OPTIONS_HEADER};
pub use run::{interpret_answer, run_batch, run_batch_to, RunSummary};
