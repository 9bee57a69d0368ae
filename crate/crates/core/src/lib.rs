//! Natural-language information retrieval over a building-object store.
//!
//! A user query is interpreted by a chain of prompted generations (intent,
//! parameters, value), executed as a structured query against the store, and
//! summarized back into natural language. The [`eval`] module scores each
//! link of that chain against annotated query sets.

pub mod datastore;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod prompt;

pub use datastore::{Store, StoreError};
pub use llm::{Backend, LlmError};
pub use pipeline::{run_query, Answer, PipelineConfig};
