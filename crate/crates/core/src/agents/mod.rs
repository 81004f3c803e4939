//! The tool-calling agent loop and the three role specializations.
//!
//! One run is a single conversation: the agent is queried, every tool call in
//! its reply is dispatched through a [`ToolSession`], results are appended to
//! the history, and the loop repeats until the agent submits, spends its step
//! budget, or the backend fails. Nothing is thrown; how the run ended is
//! recorded in [`AgentOutcome::terminal_reason`].

pub mod prompts;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, ChatTurn, Gateway};
use crate::model::{AgentKind, CandidateBundle, PublicTask, ToolName, Trajectory, TrajectoryTurn};
use crate::tools::{ToolSession, ToolStats};
use crate::workspace::WorkspaceHandle;

pub use prompts::{PromptInputs, PromptSet, RolePrompt, Template, TemplateError};

pub const DEFAULT_STEP_BUDGET: usize = 50;

/// Sent when the agent replies without calling a tool.
pub const NUDGE: &str = "Continue with the task using the available tools, and call submitter when you are done.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRole {
    pub kind: AgentKind,
    pub prompt: RolePrompt,
    /// Maximum tool calls per run; replies without tool calls count as a step too.
    pub step_budget: usize,
}

impl AgentRole {
    pub fn new(kind: AgentKind, prompt: RolePrompt, step_budget: usize) -> Self {
        assert!(step_budget >= 1, "step budget must be at least 1");
        AgentRole {
            kind,
            prompt,
            step_budget,
        }
    }

    pub fn tools(&self) -> &'static [ToolName] {
        match self.kind {
            AgentKind::Selector => &[ToolName::Bash, ToolName::Editor, ToolName::Searcher],
            _ => &ToolName::REGISTERED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Submitted,
    BudgetExhausted,
    BackendError,
    /// A generator submitted without changing anything.
    EmptySubmission,
    /// The selector ended with a plain answer.
    Answered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub submitted: bool,
    pub diff_text: Option<String>,
    pub trajectory: Trajectory,
    pub terminal_reason: TerminalReason,
    /// Final text reply, for runs that end by answering.
    pub answer: Option<String>,
    pub error: Option<String>,
    pub tool_stats: ToolStats,
}

fn skip(trajectory: &mut Trajectory, history: &mut Vec<ChatTurn>, call_id: &str, reason: &str) {
    trajectory.turns.push(TrajectoryTurn::Skipped {
        call_id: call_id.to_string(),
        reason: reason.to_string(),
    });
    history.push(ChatTurn::tool_result(call_id, format!("not executed: {reason}")));
}

/// Runs one agent to completion against `ws`.
pub fn run_agent(
    gateway: &Gateway,
    role: &AgentRole,
    task: &PublicTask,
    inputs: &PromptInputs,
    ws: &mut WorkspaceHandle,
) -> AgentOutcome {
    let mut session = ToolSession::restricted(ws, role.tools());
    let schemas = session.schemas();
    let user = role.prompt.user.render(inputs);
    let mut history = vec![ChatTurn::system(role.prompt.system.render(inputs)), ChatTurn::user(user.clone())];
    let mut trajectory = Trajectory::new(role.kind);
    trajectory.turns.push(TrajectoryTurn::User { content: user });

    let mut steps = 0usize;
    let mut answer = None;
    let mut error = None;
    let reason = loop {
        let request = ChatRequest {
            task_id: &task.task_id,
            role: role.kind,
            history: &history,
            tools: &schemas,
        };
        let (reply, cost) = match gateway.chat(&request) {
            Ok(r) => r,
            Err(e) => {
                error = Some(e.to_string());
                break TerminalReason::BackendError;
            }
        };
        trajectory.prompt_tokens += reply.usage.prompt_tokens;
        trajectory.completion_tokens += reply.usage.completion_tokens;
        trajectory.cost_usd += cost;
        trajectory.turns.push(TrajectoryTurn::Assistant {
            content: reply.turn.content.clone(),
            tool_calls: reply.turn.tool_calls.clone(),
            usage: reply.usage,
            cost_usd: cost,
        });
        let calls = reply.turn.tool_calls.clone();
        history.push(reply.turn);

        if calls.is_empty() {
            if role.kind == AgentKind::Selector {
                answer = history.last().map(|t| t.content.clone());
                break TerminalReason::Answered;
            }
            steps += 1;
            if steps >= role.step_budget {
                break TerminalReason::BudgetExhausted;
            }
            history.push(ChatTurn::user(NUDGE));
            trajectory.turns.push(TrajectoryTurn::User { content: NUDGE.into() });
            continue;
        }

        let mut exhausted = false;
        for call in &calls {
            if session.submitted().is_some() {
                skip(&mut trajectory, &mut history, &call.id, "the run was already submitted");
                continue;
            }
            if steps >= role.step_budget {
                exhausted = true;
                skip(&mut trajectory, &mut history, &call.id, "step budget exhausted");
                continue;
            }
            steps += 1;
            let inv = session.dispatch(call);
            let content = inv.output.clone();
            trajectory.turns.push(TrajectoryTurn::Invocation(inv));
            trajectory.turns.push(TrajectoryTurn::ToolResult {
                call_id: call.id.clone(),
                content: content.clone(),
            });
            history.push(ChatTurn::tool_result(&call.id, content));
        }
        if let Some(diff) = session.submitted() {
            break if diff.is_empty() && role.kind != AgentKind::Selector {
                TerminalReason::EmptySubmission
            } else {
                TerminalReason::Submitted
            };
        }
        if exhausted || steps >= role.step_budget {
            break TerminalReason::BudgetExhausted;
        }
    };
    let diff_text = match reason {
        TerminalReason::Submitted => session.submitted().map(str::to_string),
        _ => None,
    };
    AgentOutcome {
        submitted: diff_text.is_some(),
        diff_text,
        trajectory,
        terminal_reason: reason,
        answer,
        error,
        tool_stats: session.stats().clone(),
    }
}

/// Where the refinement loop is when an agent is started.
#[derive(Debug, Clone, Copy)]
pub enum StageState<'a> {
    TestGeneration {
        round: usize,
        /// Code patch that passes the current suite (refinement rounds only).
        code_patch: Option<&'a str>,
        /// The suite written so far.
        test_patch: Option<&'a str>,
        test_output: Option<&'a str>,
    },
    CodeGeneration {
        round: usize,
        test_patch: Option<&'a str>,
        test_output: Option<&'a str>,
        code_patch: Option<&'a str>,
    },
    Selection {
        candidates: &'a [SelectorCandidate<'a>],
    },
}

impl StageState<'_> {
    pub fn kind(&self) -> AgentKind {
        match self {
            StageState::TestGeneration { .. } => AgentKind::TestGenerator,
            StageState::CodeGeneration { .. } => AgentKind::CodeGenerator,
            StageState::Selection { .. } => AgentKind::Selector,
        }
    }
}

/// A bundle as shown to the selector, numbered from 1.
#[derive(Debug, Clone, Copy)]
pub struct SelectorCandidate<'a> {
    pub number: usize,
    pub bundle: &'a CandidateBundle,
    pub union_passes: usize,
    pub union_total: usize,
    pub regression_passes: usize,
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.filter(|t| !t.is_empty()).map(str::to_string)
}

fn render_candidates(candidates: &[SelectorCandidate<'_>]) -> String {
    let mut out = String::new();
    for c in candidates {
        let b = c.bundle;
        let _ = writeln!(
            out,
            "## Candidate {} (round {}, {} changed lines, {}/{} generated tests, {} regression tests passing)",
            c.number,
            b.iteration_created,
            b.code_patch.changed_lines(),
            c.union_passes,
            c.union_total,
            c.regression_passes,
        );
        let verdicts: BTreeMap<&str, &str> = b
            .verification
            .iter()
            .map(|(k, v)| (k.as_str(), if *v { "pass" } else { "fail" }))
            .collect();
        for (test, verdict) in verdicts {
            let _ = writeln!(out, "- {test}: {verdict}");
        }
        out.push_str("```diff\n");
        out.push_str(b.code_patch.diff_text());
        out.push_str("```\n\n");
    }
    out
}

/// Prompt inputs for the agent that runs in `state`.
pub fn build_context(task: &PublicTask, state: &StageState<'_>) -> PromptInputs {
    let mut inputs = PromptInputs {
        issue_text: task.issue_text.clone(),
        ..Default::default()
    };
    match *state {
        StageState::TestGeneration {
            round,
            code_patch,
            test_patch,
            test_output,
        } => {
            if round > 0 {
                inputs.current_patch = non_empty(code_patch);
                inputs.test_patch = non_empty(test_patch);
                inputs.test_output = non_empty(test_output);
            }
        }
        StageState::CodeGeneration {
            test_patch,
            test_output,
            code_patch,
            ..
        } => {
            inputs.test_patch = non_empty(test_patch);
            inputs.test_output = non_empty(test_output);
            inputs.current_patch = non_empty(code_patch);
        }
        StageState::Selection { candidates } => {
            inputs.candidates = Some(render_candidates(candidates));
        }
    }
    inputs
}

/// Extracts the candidate number from a `SELECT <n>` answer.
pub fn parse_selection(answer: &str, candidate_count: usize) -> Option<usize> {
    answer.lines().rev().find_map(|line| {
        let rest = line.trim().strip_prefix("SELECT")?;
        let n: usize = rest.trim().trim_matches(|c: char| !c.is_ascii_digit()).parse().ok()?;
        (1..=candidate_count).contains(&n).then_some(n)
    })
}
