//! Policy-driven input/output safety gateway for conversational AI.
//!
//! The crate renders safety-classification instruction tasks from
//! configurable taxonomies, queries a pluggable completion backend, parses
//! structured safe/unsafe verdicts, and ships an evaluation and
//! training-data-augmentation toolkit around them.
//!
//! Module map:
//!
//! - [`policy`] — taxonomies: the built-in six-category policy, loading and
//!   validation of custom ones, category subsetting, the registry.
//! - [`prompt`] — task rendering: conversations, zero-shot and few-shot
//!   classification prompts with a frozen deterministic template.
//! - [`parse`] — verdict grammar (`safe` / `unsafe` + category codes) and
//!   first-token probability scoring.
//! - [`backend`] — classifier backends: an OpenAI-completions-compatible
//!   HTTP client, a deterministic rule-table mock, per-category-score
//!   adapters, max-all aggregation, severity binarization.
//! - [`eval`] — JSONL datasets and adapter manifests, 3:1 splitting,
//!   category statistics, AUPRC / P / R / F1, and the overall, 1-vs-all,
//!   and 1-vs-benign methodologies.
//! - [`augment`] — category dropping, flip-to-safe, and index shuffling
//!   transforms emitting instruction-format training records.
//! - [`gateway`] — the HTTP moderation service and the engine behind it.
//!
//! # Quick start
//!
//! ```
//! use chatguard::backend::MockBackend;
//! use chatguard::gateway::{Gateway, ModerationRequest};
//! use chatguard::policy::PolicyRegistry;
//! use chatguard::prompt::Message;
//! use std::sync::Arc;
//!
//! # #[tokio::main(flavor = "current_thread")]
//! # async fn main() {
//! let gateway = Gateway::new(Arc::new(MockBackend::new()), PolicyRegistry::with_builtin());
//! let request = ModerationRequest {
//!     messages: vec![Message::user("What's the capital of France?")],
//!     policy_id: "default".into(),
//!     target: Default::default(),
//!     mode: Default::default(),
//! };
//! let response = gateway.moderate(&request, false).await.unwrap();
//! assert_eq!(response.results.len(), 1);
//! # }
//! ```
//!
//! Runnable walkthroughs for every capability live in `examples/`; the
//! `chatguard` binary exposes the same capabilities as subcommands.

pub mod augment;
pub mod backend;
pub mod cli;
pub mod eval;
pub mod gateway;
pub mod parse;
pub mod policy;
pub mod prompt;

pub use backend::{CompletionBackend, CompletionRequest, CompletionResult};
pub use gateway::{Gateway, ModerationRequest, ModerationResponse};
pub use parse::{Label, Verdict};
pub use policy::{builtin_policy, load_policy, Policy, PolicySubset};
pub use prompt::{build_task_prompt, ClassificationTask, Conversation, Message, Role, Target};
