//! Title/abstract screening for clinical reviews with a chat-completion LLM.
//!
//! The pipeline loads a manifest of datasets with their inclusion and
//! exclusion criteria, renders one screening prompt per record, asks a
//! backend for an `included`/`excluded` decision, and checkpoints the results
//! to CSV. The [`metrics`] module then scores any two decision columns against
//! each other (accuracy, per-class sensitivity, Cohen's kappa, classification
//! report).

pub mod corpus;
pub mod llm;
pub mod metrics;
pub mod prompt;
pub mod runner;

pub use corpus::{
    clean_text, load_dataset, load_manifest, write_results, CorpusError, CriteriaSet, Decision,
    ManifestEntry, ScreeningManifest, ScreeningRecord,
};
pub use llm::{
    count_tokens_estimate, parse_decision, BackendError, CompletionBackend, CompletionRequest,
    CompletionResult,
};
pub use prompt::{PromptError, PromptKind, PromptText};
