//! Stage 1 refinement loop, Stage 2 selection, and the per-task driver.

mod stage1;
mod stage2;

use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agents::{self, AgentOutcome, AgentRole, PromptSet, StageState, TerminalReason};
use crate::diff;
use crate::gateway::Gateway;
use crate::model::{AgentKind, CandidateBundle, EnvSpec, Patch, PatchKind, Producer, PublicTask, Trajectory};
use crate::tools::ToolStats;
use crate::workspace::{SandboxConfig, WorkspaceError, WorkspaceHandle};

pub use stage1::{ReproductionCheck, Stage1Outcome};
pub use stage2::{rank, union_suite, CandidateScore, SelectionMethod, SelectionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepBudgets {
    pub test_generator: usize,
    pub code_generator: usize,
    pub selector: usize,
}

impl Default for StepBudgets {
    fn default() -> Self {
        StepBudgets {
            test_generator: agents::DEFAULT_STEP_BUDGET,
            code_generator: agents::DEFAULT_STEP_BUDGET,
            selector: agents::DEFAULT_STEP_BUDGET,
        }
    }
}

impl StepBudgets {
    pub fn get(&self, kind: AgentKind) -> usize {
        match kind {
            AgentKind::TestGenerator => self.test_generator,
            AgentKind::CodeGenerator => self.code_generator,
            AgentKind::Selector => self.selector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// Hard cap on Stage 1 rounds.
    pub max_iterations: usize,
    pub adversarial_enabled: bool,
    pub selection_enabled: bool,
    pub candidates_target: usize,
    /// Ask the selector agent to break exact ranking ties.
    pub consult_selector: bool,
    pub step_budgets: StepBudgets,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            max_iterations: 3,
            adversarial_enabled: true,
            selection_enabled: true,
            candidates_target: 3,
            consult_selector: true,
            step_budgets: StepBudgets::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{key} must be at least 1")]
    TooSmall { key: &'static str },
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            ("max_iterations", self.max_iterations),
            ("candidates_target", self.candidates_target),
            ("step_budgets.test_generator", self.step_budgets.test_generator),
            ("step_budgets.code_generator", self.step_budgets.code_generator),
            ("step_budgets.selector", self.step_budgets.selector),
        ];
        match checks.into_iter().find(|(_, v)| *v < 1) {
            Some((key, _)) => Err(ConfigError::TooSmall { key }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    CapReached,
    TestsStrengthenedStillPassing,
    NoReproducingTest,
    GeneratorFailed,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::CapReached => "cap_reached",
            Termination::TestsStrengthenedStillPassing => "tests_strengthened_still_passing",
            Termination::NoReproducingTest => "no_reproducing_test",
            Termination::GeneratorFailed => "generator_failed",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("no candidate bundles to select from")]
    NoCandidates,
}

/// One agent run as kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub kind: AgentKind,
    pub round: usize,
    pub terminal_reason: TerminalReason,
    pub error: Option<String>,
    pub diff_text: Option<String>,
    pub trajectory: Trajectory,
}

impl AgentRun {
    fn new(round: usize, outcome: &AgentOutcome) -> Self {
        AgentRun {
            kind: outcome.trajectory.role,
            round,
            terminal_reason: outcome.terminal_reason,
            error: outcome.error.clone(),
            diff_text: outcome.diff_text.clone(),
            trajectory: outcome.trajectory.clone(),
        }
    }
}

/// Verdict of one test id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRun {
    pub test_id: String,
    pub passed: bool,
    pub exit_code: i32,
    pub timed_out: bool,
    pub output: String,
}

/// Runs each test id through the task's test command; pass iff exit 0.
pub fn run_tests(ws: &mut WorkspaceHandle, env: &EnvSpec, ids: &[String]) -> Result<Vec<TestRun>, WorkspaceError> {
    ids.iter()
        .map(|id| {
            let command = env.test_invocation(id);
            let r = ws.exec_default(&command)?;
            let mut output = format!("$ {command}\nexit_code: {}\n", r.exit_code);
            output.push_str(&r.stdout);
            if !r.stderr.is_empty() && !output.ends_with('\n') {
                output.push('\n');
            }
            output.push_str(&r.stderr);
            Ok(TestRun {
                test_id: id.clone(),
                passed: r.success(),
                exit_code: r.exit_code,
                timed_out: r.timed_out,
                output,
            })
        })
        .collect()
}

/// Output of the failing runs, as shown to agents.
pub fn failure_report(runs: &[TestRun]) -> String {
    let mut out = String::new();
    for r in runs.iter().filter(|r| !r.passed) {
        out.push_str(&r.output);
        if !out.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

pub fn verdicts(runs: &[TestRun]) -> BTreeMap<String, bool> {
    runs.iter().map(|r| (r.test_id.clone(), r.passed)).collect()
}

/// Everything one `resolve` call produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_id: String,
    pub backend: String,
    pub termination: Option<Termination>,
    pub rounds: usize,
    /// Final code patch with test files removed; empty when nothing was produced.
    pub final_patch: String,
    pub selected_bundle: Option<usize>,
    pub selection: Option<SelectionReport>,
    pub bundles: Vec<CandidateBundle>,
    pub reproduction: Vec<ReproductionCheck>,
    pub runs: Vec<AgentRun>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: Decimal,
    pub tool_stats: ToolStats,
    pub test_generation_runs: usize,
    pub code_generation_runs: usize,
    /// Test executions made while ranking candidates.
    pub stage2_executions: usize,
    pub error: Option<String>,
    /// The resolved configuration the run used.
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn tool_invocation_count(&self) -> usize {
        self.runs.iter().map(|r| r.trajectory.tool_call_count()).sum()
    }

    pub fn trajectory_count(&self, kind: AgentKind) -> usize {
        self.runs.iter().filter(|r| r.kind == kind).count()
    }
}

/// Wires a gateway, prompts and sandbox settings to the two stages.
pub struct Resolver<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub sandbox: &'a SandboxConfig,
    pub config: StageConfig,
    /// Echoed into every report.
    pub config_echo: serde_json::Value,
}

impl<'a> Resolver<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet, sandbox: &'a SandboxConfig, config: StageConfig) -> Self {
        Resolver {
            gateway,
            prompts,
            sandbox,
            config,
            config_echo: serde_json::Value::Null,
        }
    }

    pub fn with_config_echo(mut self, echo: serde_json::Value) -> Self {
        self.config_echo = echo;
        self
    }

    fn role(&self, kind: AgentKind) -> AgentRole {
        AgentRole::new(kind, self.prompts.get(kind).clone(), self.config.step_budgets.get(kind).max(1))
    }

    fn run_agent(&self, task: &PublicTask, state: &StageState<'_>, ws: &mut WorkspaceHandle) -> AgentOutcome {
        let inputs = agents::build_context(task, state);
        agents::run_agent(self.gateway, &self.role(state.kind()), task, &inputs, ws)
    }

    pub fn stage1(&self, task: &PublicTask, ws: &mut WorkspaceHandle) -> Result<Stage1Outcome, WorkspaceError> {
        stage1::run(self, task, ws)
    }

    pub fn stage2(
        &self,
        task: &PublicTask,
        bundles: &[CandidateBundle],
        ws: &mut WorkspaceHandle,
    ) -> Result<(SelectionReport, Vec<AgentRun>), OrchestratorError> {
        stage2::run(self, task, bundles, ws)
    }

    /// Runs both stages for one task. Never fails: errors end up in the
    /// report next to an empty patch.
    pub fn resolve(&self, task: &PublicTask) -> RunReport {
        let mut report = RunReport {
            task_id: task.task_id.clone(),
            backend: self.gateway.backend_name().to_string(),
            termination: None,
            rounds: 0,
            final_patch: String::new(),
            selected_bundle: None,
            selection: None,
            bundles: Vec::new(),
            reproduction: Vec::new(),
            runs: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            cost_usd: Decimal::ZERO,
            tool_stats: ToolStats::default(),
            test_generation_runs: 0,
            code_generation_runs: 0,
            stage2_executions: 0,
            error: None,
            config: self.config_echo.clone(),
        };
        if let Err(e) = self.config.validate() {
            report.error = Some(e.to_string());
            return report;
        }
        let mut ws = match WorkspaceHandle::create(task, self.sandbox) {
            Ok(ws) => ws,
            Err(e) => {
                report.error = Some(e.to_string());
                return report;
            }
        };
        match self.stage1(task, &mut ws) {
            Ok(s1) => {
                report.termination = Some(s1.termination);
                report.rounds = s1.rounds;
                report.bundles = s1.bundles;
                report.reproduction = s1.reproduction;
                report.runs = s1.runs;
                report.test_generation_runs = s1.test_generation_runs;
                report.code_generation_runs = s1.code_generation_runs;
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        if report.error.is_none() {
            match self.stage2(task, &report.bundles, &mut ws) {
                Ok((selection, runs)) => {
                    report.stage2_executions = selection.executions;
                    report.selected_bundle = Some(selection.selected);
                    let code = &report.bundles[selection.selected].code_patch;
                    report.final_patch = diff::filter_test_files(code.diff()).to_text();
                    report.selection = Some(selection);
                    report.runs.extend(runs);
                }
                Err(OrchestratorError::NoCandidates) => {}
                Err(e) => report.error = Some(e.to_string()),
            }
        }
        ws.dispose();
        for run in &report.runs {
            report.prompt_tokens += run.trajectory.prompt_tokens;
            report.completion_tokens += run.trajectory.completion_tokens;
            report.cost_usd += run.trajectory.cost_usd;
            report.tool_stats.merge(&ToolStats::from_invocations(run.trajectory.invocations()));
        }
        report
    }
}

/// Splits an agent's working-tree diff into its code and test parts.
pub(crate) fn split_submission(text: &str, round: usize, producer: Producer) -> Result<(Patch, Patch), String> {
    let parsed = diff::parse_diff(text).map_err(|e| e.to_string())?;
    let (code, tests) = diff::partition_test_files(&parsed);
    let code = Patch::from_diff(PatchKind::Code, code, producer, round).map_err(|e| e.to_string())?;
    let tests = Patch::from_diff(PatchKind::Test, tests, producer, round).map_err(|e| e.to_string())?;
    Ok((code, tests))
}

pub(crate) fn apply_all(ws: &mut WorkspaceHandle, patches: &[&Patch]) -> Result<(), WorkspaceError> {
    ws.reset()?;
    for p in patches {
        if !p.is_empty() {
            ws.apply_patch(p)?;
        }
    }
    Ok(())
}
