//! Shared domain types.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::diff::{self, Diff, DiffError, MalformedKind};
use crate::gateway::{ToolCall, Usage};

/// How a task's environment is prepared and how a single test is run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    /// Commands run once, in order, after the repository is materialized.
    #[serde(default)]
    pub install: Vec<String>,
    /// Command template running one test; `{test}` is replaced by the test id.
    pub test_command: String,
    /// Pre-existing, visible regression tests of the repository.
    #[serde(default)]
    pub regression_tests: Vec<String>,
    /// Prebuilt container image for the container backend.
    #[serde(default)]
    pub image: Option<String>,
    /// Per-task override of the default exec timeout.
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

impl EnvSpec {
    pub fn test_invocation(&self, test_id: &str) -> String {
        self.test_command.replace("{test}", &shell_quote(test_id))
    }
}

pub fn shell_quote(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/' | ':' | '=' | '+' | ','));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "'\\''"))
    }
}

/// One resolvable unit, including the hidden evaluation data.
///
/// Agents and the orchestrator only ever see a [`PublicTask`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueTask {
    pub task_id: String,
    pub repo_root: PathBuf,
    pub base_revision: String,
    pub issue_text: String,
    pub env_spec: EnvSpec,
    pub hidden_fail_to_pass: Vec<String>,
    pub hidden_pass_to_pass: Vec<String>,
    /// Test patch that installs the hidden tests at evaluation time.
    pub hidden_test_patch: Option<String>,
}

impl IssueTask {
    pub fn public(&self) -> PublicTask {
        PublicTask {
            task_id: self.task_id.clone(),
            repo_root: self.repo_root.clone(),
            base_revision: self.base_revision.clone(),
            issue_text: self.issue_text.clone(),
            env_spec: self.env_spec.clone(),
        }
    }

    pub fn hidden_test_ids(&self) -> impl Iterator<Item = &str> {
        self.hidden_fail_to_pass
            .iter()
            .chain(&self.hidden_pass_to_pass)
            .map(String::as_str)
    }
}

/// The part of an [`IssueTask`] that agents are allowed to see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTask {
    pub task_id: String,
    pub repo_root: PathBuf,
    pub base_revision: String,
    pub issue_text: String,
    pub env_spec: EnvSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Code,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    TestGenerator,
    CodeGenerator,
    /// Supplied from outside the refinement loop (reference patches, CLI input).
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error(transparent)]
    Malformed(#[from] DiffError),
    #[error("{kind:?} patch touches {path}, which violates its kind")]
    KindMismatch { kind: PatchKind, path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPatch {
    kind: PatchKind,
    diff_text: String,
    producer: Producer,
    iteration: usize,
}

/// A validated unified diff with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPatch", into = "RawPatch")]
pub struct Patch {
    kind: PatchKind,
    diff_text: String,
    producer: Producer,
    iteration: usize,
    #[serde(skip)]
    diff: Diff,
}

impl TryFrom<RawPatch> for Patch {
    type Error = PatchError;

    fn try_from(raw: RawPatch) -> Result<Self, Self::Error> {
        Patch::new(raw.kind, raw.diff_text, raw.producer, raw.iteration)
    }
}

impl From<Patch> for RawPatch {
    fn from(p: Patch) -> Self {
        RawPatch {
            kind: p.kind,
            diff_text: p.diff_text,
            producer: p.producer,
            iteration: p.iteration,
        }
    }
}

impl Patch {
    /// Validates that the text is a well-formed, text-only diff whose files
    /// all agree with `kind` under the test-path rule.
    pub fn new(kind: PatchKind, diff_text: impl Into<String>, producer: Producer, iteration: usize) -> Result<Self, PatchError> {
        let diff_text = diff_text.into();
        let diff = diff::parse_diff(&diff_text)?;
        Self::check(kind, &diff)?;
        Ok(Patch {
            kind,
            diff_text,
            producer,
            iteration,
            diff,
        })
    }

    /// Builds a patch from an already parsed diff, using its normalized text.
    pub fn from_diff(kind: PatchKind, diff: Diff, producer: Producer, iteration: usize) -> Result<Self, PatchError> {
        Self::check(kind, &diff)?;
        Ok(Patch {
            kind,
            diff_text: diff.to_text(),
            producer,
            iteration,
            diff,
        })
    }

    fn check(kind: PatchKind, diff: &Diff) -> Result<(), PatchError> {
        for file in &diff.files {
            if file.binary.is_some() {
                return Err(PatchError::Malformed(DiffError::Malformed {
                    kind: MalformedKind::BinaryHunk,
                    line: 0,
                    detail: format!("binary change to {}", file.path()),
                }));
            }
            let wrong = match kind {
                PatchKind::Test => !file.touched_paths().into_iter().all(diff::is_test_path),
                PatchKind::Code => file.is_test_file(),
            };
            if wrong {
                return Err(PatchError::KindMismatch {
                    kind,
                    path: file.path().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn empty(kind: PatchKind, producer: Producer, iteration: usize) -> Self {
        Patch {
            kind,
            diff_text: String::new(),
            producer,
            iteration,
            diff: Diff::default(),
        }
    }

    pub fn kind(&self) -> PatchKind {
        self.kind
    }

    pub fn diff_text(&self) -> &str {
        &self.diff_text
    }

    pub fn producer(&self) -> Producer {
        self.producer
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn diff(&self) -> &Diff {
        &self.diff
    }

    pub fn is_empty(&self) -> bool {
        self.diff.is_empty()
    }

    pub fn changed_lines(&self) -> usize {
        self.diff.changed_lines()
    }

    /// Test identifiers a test patch contributes: every file it leaves in place.
    pub fn test_ids(&self) -> Vec<String> {
        self.diff
            .files
            .iter()
            .filter(|f| !f.is_deletion())
            .map(|f| f.path().to_string())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    Bash,
    Editor,
    Searcher,
    Submitter,
    /// A call naming a tool outside the registry.
    Unknown,
}

impl ToolName {
    pub const REGISTERED: [ToolName; 4] = [ToolName::Bash, ToolName::Editor, ToolName::Searcher, ToolName::Submitter];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::Bash => "bash",
            ToolName::Editor => "editor",
            ToolName::Searcher => "searcher",
            ToolName::Submitter => "submitter",
            ToolName::Unknown => "unknown",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::REGISTERED.into_iter().find(|t| t.as_str() == name)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable failure category carried by unsuccessful tool calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    NonZeroExit,
    Timeout,
    WorkspaceDead,
    FileExists,
    FileNotFound,
    OldStrNotFound,
    OldStrAmbiguous,
    PathEscape,
    BadRange,
    BadPattern,
    ProtocolError,
    Io,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub category: ErrorCategory,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchMatch {
    pub path: String,
    pub line_number: usize,
    pub line_text: String,
}

/// Structured result data attached to an invocation, per tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ToolPayload {
    None,
    Exec { exit_code: i32, timed_out: bool },
    Search { matches: Vec<SearchMatch>, truncated: bool },
    Diff { diff_text: String },
}

/// One recorded tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub call_id: String,
    pub tool: ToolName,
    pub args: serde_json::Value,
    /// Text handed back to the model.
    pub output: String,
    pub payload: ToolPayload,
    pub failure: Option<ToolFailure>,
    pub success: bool,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    TestGenerator,
    CodeGenerator,
    Selector,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::TestGenerator => "test_generator",
            AgentKind::CodeGenerator => "code_generator",
            AgentKind::Selector => "selector",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "turn", rename_all = "snake_case")]
pub enum TrajectoryTurn {
    User {
        content: String,
    },
    Assistant {
        content: String,
        tool_calls: Vec<ToolCall>,
        usage: Usage,
        cost_usd: Decimal,
    },
    Invocation(ToolInvocation),
    ToolResult {
        call_id: String,
        content: String,
    },
    /// Stands in for the result of a call that was not executed (step budget spent).
    Skipped {
        call_id: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub role: AgentKind,
    pub turns: Vec<TrajectoryTurn>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("tool result for {0} does not follow its invocation")]
    OrphanResult(String),
    #[error("invocation {0} does not match a pending assistant tool call")]
    OrphanInvocation(String),
    #[error("tool call {0} has no result")]
    MissingResult(String),
}

impl Trajectory {
    pub fn new(role: AgentKind) -> Self {
        Trajectory {
            role,
            turns: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            cost_usd: Decimal::ZERO,
        }
    }

    pub fn invocations(&self) -> impl Iterator<Item = &ToolInvocation> {
        self.turns.iter().filter_map(|t| match t {
            TrajectoryTurn::Invocation(inv) => Some(inv),
            _ => None,
        })
    }

    pub fn tool_call_count(&self) -> usize {
        self.invocations().count()
    }

    /// Per-turn costs of the assistant turns, in order.
    pub fn turn_costs(&self) -> impl Iterator<Item = (Usage, Decimal)> + '_ {
        self.turns.iter().filter_map(|t| match t {
            TrajectoryTurn::Assistant { usage, cost_usd, .. } => Some((*usage, *cost_usd)),
            _ => None,
        })
    }

    /// Checks that every assistant tool call is answered exactly once, and
    /// that a tool result only ever follows the invocation it belongs to.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let mut pending: Vec<String> = Vec::new();
        let mut last_invoked: Option<String> = None;
        for turn in &self.turns {
            match turn {
                TrajectoryTurn::Assistant { tool_calls, .. } => {
                    if let Some(id) = pending.first() {
                        return Err(TrajectoryError::MissingResult(id.clone()));
                    }
                    pending = tool_calls.iter().map(|c| c.id.clone()).collect();
                    last_invoked = None;
                }
                TrajectoryTurn::Invocation(inv) => {
                    if pending.first() != Some(&inv.call_id) {
                        return Err(TrajectoryError::OrphanInvocation(inv.call_id.clone()));
                    }
                    last_invoked = Some(inv.call_id.clone());
                }
                TrajectoryTurn::ToolResult { call_id, .. } => {
                    if last_invoked.as_ref() != Some(call_id) {
                        return Err(TrajectoryError::OrphanResult(call_id.clone()));
                    }
                    pending.remove(0);
                    last_invoked = None;
                }
                TrajectoryTurn::Skipped { call_id, .. } => {
                    if pending.first() != Some(call_id) || last_invoked.is_some() {
                        return Err(TrajectoryError::OrphanResult(call_id.clone()));
                    }
                    pending.remove(0);
                }
                TrajectoryTurn::User { .. } => {
                    if let Some(id) = pending.first() {
                        return Err(TrajectoryError::MissingResult(id.clone()));
                    }
                }
            }
        }
        match pending.first() {
            Some(id) => Err(TrajectoryError::MissingResult(id.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("code patch slot holds a {0:?} patch")]
    CodeSlot(PatchKind),
    #[error("test patch slot holds a {0:?} patch")]
    TestSlot(PatchKind),
}

/// A code patch with the test-suite state it was verified against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBundle {
    pub code_patch: Patch,
    pub test_patches: Vec<Patch>,
    /// Test id to pass (true) / fail (false).
    pub verification: BTreeMap<String, bool>,
    pub iteration_created: usize,
    /// False when no reproducing test existed to verify against.
    pub verified: bool,
}

impl CandidateBundle {
    pub fn assemble(
        code_patch: Patch,
        test_patches: Vec<Patch>,
        verification: BTreeMap<String, bool>,
        iteration_created: usize,
        verified: bool,
    ) -> Result<Self, BundleError> {
        if code_patch.kind() != PatchKind::Code {
            return Err(BundleError::CodeSlot(code_patch.kind()));
        }
        if let Some(p) = test_patches.iter().find(|p| p.kind() != PatchKind::Test) {
            return Err(BundleError::TestSlot(p.kind()));
        }
        Ok(CandidateBundle {
            code_patch,
            test_patches,
            verification,
            iteration_created,
            verified,
        })
    }

    /// The newest test patch, which carries the full suite the bundle was verified against.
    pub fn suite(&self) -> Option<&Patch> {
        self.test_patches.last()
    }

    pub fn all_passing(&self) -> bool {
        self.verification.values().all(|v| *v)
    }
}
