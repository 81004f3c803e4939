//! Adversarial test/patch co-refinement for repository-level issue resolution.
//!
//! A test-generating agent and a code-generating agent take turns inside an
//! isolated per-issue workspace: tests must reproduce the reported fault,
//! code patches must make them pass, and the tests are then strengthened
//! against the current patch. Every candidate produced along the way is
//! re-verified against the union of all generated tests and the most
//! reliable one is emitted.
//!
//! Module map:
//! - [`diff`] unified-diff parsing, serialization, test-file exclusion and
//!   in-memory application.
//! - [`model`] shared domain types.
//! - [`workspace`] per-issue sandboxes (process or container backed).
//! - [`tools`] the agent-callable tool suite and its telemetry.
//! - [`gateway`] chat backends (live HTTP and deterministic scripted replay)
//!   and cost accounting.
//! - [`agents`] the tool-calling agent loop and prompt contexts.
//! - [`orchestrator`] the refinement loop and candidate selection.
//! - [`evalkit`] fixture corpora, hidden-test evaluation and reports.

pub mod agents;
pub mod diff;
pub mod evalkit;
pub mod gateway;
pub mod model;
pub mod orchestrator;
pub mod par;
pub mod tools;
pub mod workspace;

pub use diff::{filter_test_files, is_test_path, parse_diff, Diff, DiffError};
pub use model::{CandidateBundle, IssueTask, Patch, PatchKind, Producer, PublicTask};
