//! Fixture corpora, hidden-test evaluation, and benchmark reports.

mod corpus;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::diff::{self, DiffError};
use crate::model::{IssueTask, ToolName};
use crate::orchestrator::{self, Resolver, RunReport, Termination};
use crate::par;
use crate::tools::ToolStats;
use crate::workspace::{SandboxConfig, WorkspaceError, WorkspaceHandle};

pub use corpus::{load_corpus, load_task_dir, shipped_corpus_dir, CorpusManifest, CorpusTask, ManifestInvalid, MANIFEST_NAME};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("patch edits test file {0}; filter test files before evaluation")]
    UnfilteredTestEdit(String),
    #[error(transparent)]
    Malformed(#[from] DiffError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenKind {
    FailToPass,
    PassToPass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub test_id: String,
    pub kind: HiddenKind,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub resolved: bool,
    /// Why the patch could not be evaluated normally, e.g. a conflict.
    pub reason: Option<String>,
    pub verdicts: Vec<TestVerdict>,
}

/// Applies `diff_text` to a fresh workspace, installs the hidden tests and
/// runs them. Resolved iff every hidden test passes.
pub fn evaluate_patch(task: &IssueTask, diff_text: &str, sandbox: &SandboxConfig) -> Result<Evaluation, EvalError> {
    let parsed = diff::parse_diff(diff_text)?;
    if let Some(f) = parsed.files.iter().find(|f| f.is_test_file()) {
        return Err(EvalError::UnfilteredTestEdit(f.path().to_string()));
    }
    let mut ws = WorkspaceHandle::create(&task.public(), sandbox)?;
    let unresolved = |reason: String| Evaluation {
        resolved: false,
        reason: Some(reason),
        verdicts: Vec::new(),
    };
    match ws.apply_diff(&parsed) {
        Ok(()) => {}
        Err(e @ (WorkspaceError::PatchConflict { .. } | WorkspaceError::PathEscape(_) | WorkspaceError::MalformedDiff(_))) => {
            return Ok(unresolved(format!("patch does not apply: {e}")))
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(hidden) = &task.hidden_test_patch {
        let hidden = diff::parse_diff(hidden)?;
        if let Err(e) = ws.apply_diff(&hidden) {
            return Ok(unresolved(format!("hidden tests do not apply on top of the patch: {e}")));
        }
    }
    let mut verdicts = Vec::new();
    for (ids, kind) in [
        (&task.hidden_fail_to_pass, HiddenKind::FailToPass),
        (&task.hidden_pass_to_pass, HiddenKind::PassToPass),
    ] {
        for run in orchestrator::run_tests(&mut ws, &task.env_spec, ids)? {
            verdicts.push(TestVerdict {
                test_id: run.test_id,
                kind,
                passed: run.passed,
            });
        }
    }
    ws.dispose();
    Ok(Evaluation {
        resolved: verdicts.iter().all(|v| v.passed),
        reason: None,
        verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub resolved: bool,
    pub cost_usd: Decimal,
    pub termination: Option<Termination>,
    pub rounds: usize,
    pub error: Option<String>,
    pub evaluation: Option<Evaluation>,
    pub tool_stats: ToolStats,
    pub test_generation_runs: usize,
    pub code_generation_runs: usize,
    pub stage2_executions: usize,
    pub final_patch: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub calls: u64,
    pub failures: u64,
    pub avg_calls_per_task: f64,
    /// failures / calls; 0 when the tool was never called.
    pub failure_rate: f64,
}

impl ToolSummary {
    pub fn new(calls: u64, failures: u64, tasks: usize) -> Self {
        ToolSummary {
            calls,
            failures,
            avg_calls_per_task: if tasks == 0 { 0.0 } else { calls as f64 / tasks as f64 },
            failure_rate: if calls == 0 { 0.0 } else { failures as f64 / calls as f64 },
        }
    }
}

/// Per-tool summaries over `tasks` tasks; every registered tool is listed.
pub fn summarize_tools(stats: &ToolStats, tasks: usize) -> BTreeMap<ToolName, ToolSummary> {
    ToolName::REGISTERED
        .iter()
        .chain(stats.per_tool.keys())
        .map(|t| {
            let c = stats.get(*t);
            (*t, ToolSummary::new(c.calls, c.failures, tasks))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task_count: usize,
    pub resolved_count: usize,
    /// Percentage of tasks resolved.
    pub resolved_rate: f64,
    pub total_cost_usd: Decimal,
    pub avg_cost_usd: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub corpus_version: String,
    pub tasks: Vec<TaskResult>,
    pub aggregate: Aggregate,
    pub tool_totals: ToolStats,
    pub tool_stats: BTreeMap<ToolName, ToolSummary>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Aggregates per-task records; the result does not depend on their order
    /// beyond the order of `tasks` itself.
    pub fn from_tasks(corpus_version: &str, tasks: Vec<TaskResult>, config: serde_json::Value) -> Self {
        let task_count = tasks.len();
        let resolved_count = tasks.iter().filter(|t| t.resolved).count();
        let total_cost_usd: Decimal = tasks.iter().map(|t| t.cost_usd).sum();
        let mut totals = ToolStats::default();
        for t in &tasks {
            totals.merge(&t.tool_stats);
        }
        EvalReport {
            version: REPORT_VERSION.into(),
            corpus_version: corpus_version.into(),
            aggregate: Aggregate {
                task_count,
                resolved_count,
                resolved_rate: if task_count == 0 {
                    0.0
                } else {
                    resolved_count as f64 / task_count as f64 * 100.0
                },
                total_cost_usd,
                avg_cost_usd: if task_count == 0 {
                    Decimal::ZERO
                } else {
                    total_cost_usd / Decimal::from(task_count)
                },
            },
            tool_stats: summarize_tools(&totals, task_count),
            tool_totals: totals,
            tasks,
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ReportUnreadable> {
        let text = fs::read_to_string(path).map_err(|e| ReportUnreadable {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ReportUnreadable {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot read report {path}: {detail}")]
pub struct ReportUnreadable {
    pub path: String,
    pub detail: String,
}

/// Result of a benchmark: the aggregate report plus every task's run report.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub report: EvalReport,
    pub runs: Vec<RunReport>,
}

fn task_result(task: &IssueTask, run: &RunReport, sandbox: &SandboxConfig) -> TaskResult {
    let mut error = run.error.clone();
    let evaluation = match evaluate_patch(task, &run.final_patch, sandbox) {
        Ok(e) => Some(e),
        Err(e) => {
            error.get_or_insert_with(|| format!("evaluation failed: {e}"));
            None
        }
    };
    TaskResult {
        task_id: task.task_id.clone(),
        resolved: evaluation.as_ref().is_some_and(|e| e.resolved),
        cost_usd: run.cost_usd,
        termination: run.termination,
        rounds: run.rounds,
        error,
        evaluation,
        tool_stats: run.tool_stats.clone(),
        test_generation_runs: run.test_generation_runs,
        code_generation_runs: run.code_generation_runs,
        stage2_executions: run.stage2_executions,
        final_patch: run.final_patch.clone(),
    }
}

/// Resolves and evaluates every task, up to `workers` at a time.
pub fn run_benchmark(corpus: &CorpusManifest, resolver: &Resolver<'_>, workers: usize) -> Benchmark {
    let pairs: Vec<(TaskResult, RunReport)> = par::with_workers(workers, || {
        par::map(&corpus.tasks, |ct| {
            let run = resolver.resolve(&ct.task.public());
            (task_result(&ct.task, &run, resolver.sandbox), run)
        })
    });
    let (tasks, runs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Benchmark {
        report: EvalReport::from_tasks(&corpus.version, tasks, resolver.config_echo.clone()),
        runs,
    }
}

/// Same as [`run_benchmark`] but strictly one task at a time.
pub fn run_benchmark_sequential(corpus: &CorpusManifest, resolver: &Resolver<'_>) -> Benchmark {
    let pairs: Vec<(TaskResult, RunReport)> = par::map_sequential(&corpus.tasks, |ct| {
        let run = resolver.resolve(&ct.task.public());
        (task_result(&ct.task, &run, resolver.sandbox), run)
    });
    let (tasks, runs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Benchmark {
        report: EvalReport::from_tasks(&corpus.version, tasks, resolver.config_echo.clone()),
        runs,
    }
}

fn pct(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

/// Human-readable per-task table with a resolved-rate footer.
pub fn render_table(report: &EvalReport) -> String {
    let rows: Vec<[String; 4]> = report
        .tasks
        .iter()
        .map(|t| {
            [
                t.task_id.clone(),
                if t.resolved { "yes".into() } else { "no".into() },
                format!("${:.5}", t.cost_usd),
                t.termination.map_or("error", Termination::as_str).to_string(),
            ]
        })
        .collect();
    let header = ["task", "resolved", "cost", "termination"];
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: [&str; 4], out: &mut String| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:>w2$}  {:<w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(header, &mut out);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 6));
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]], &mut out);
    }
    let a = &report.aggregate;
    let _ = writeln!(
        out,
        "\nresolved: {}/{} ({:.2}%)   avg cost: ${:.5}",
        a.resolved_count, a.task_count, a.resolved_rate, a.avg_cost_usd
    );
    out
}

/// Per-tool telemetry table.
pub fn render_tool_table(stats: &BTreeMap<ToolName, ToolSummary>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10}  {:>7}  {:>8}  {:>14}  {:>12}", "tool", "calls", "failures", "avg calls/task", "failure rate");
    for (tool, s) in stats {
        let rate = if s.calls == 0 { format!("{} (no calls)", pct(0.0)) } else { pct(s.failure_rate) };
        let _ = writeln!(
            out,
            "{:<10}  {:>7}  {:>8}  {:>14.2}  {:>12}",
            tool.as_str(),
            s.calls,
            s.failures,
            s.avg_calls_per_task,
            rate
        );
    }
    out
}

/// Invocation-weighted merge of several reports' tool telemetry.
pub fn merge_telemetry(reports: &[EvalReport]) -> (usize, BTreeMap<ToolName, ToolSummary>) {
    let mut totals = ToolStats::default();
    let mut tasks = 0;
    for r in reports {
        totals.merge(&r.tool_totals);
        tasks += r.aggregate.task_count;
    }
    (tasks, summarize_tools(&totals, tasks))
}

/// Writes `report.json`, `table.txt`, and per-task patches and run reports.
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> io::Result<()> {
    fs::create_dir_all(dir.join("patches"))?;
    fs::create_dir_all(dir.join("runs"))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&bench.report)? + "\n")?;
    let table = render_table(&bench.report) + "\n" + &render_tool_table(&bench.report.tool_stats);
    fs::write(dir.join("table.txt"), table)?;
    for run in &bench.runs {
        fs::write(dir.join("patches").join(format!("{}.patch", run.task_id)), &run.final_patch)?;
        fs::write(
            dir.join("runs").join(format!("{}.json", run.task_id)),
            serde_json::to_string_pretty(run)? + "\n",
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::ToolCounter;

    fn task(id: &str, resolved: bool, cost: &str, bash: (u64, u64)) -> TaskResult {
        let mut stats = ToolStats::default();
        stats.per_tool.insert(ToolName::Bash, ToolCounter { calls: bash.0, failures: bash.1 });
        TaskResult {
            task_id: id.into(),
            resolved,
            cost_usd: cost.parse().unwrap(),
            termination: Some(Termination::CapReached),
            rounds: 1,
            error: None,
            evaluation: None,
            tool_stats: stats,
            test_generation_runs: 1,
            code_generation_runs: 1,
            stage2_executions: 0,
            final_patch: String::new(),
        }
    }

    #[test]
    fn aggregate_rates() {
        let r = EvalReport::from_tasks(
            "1",
            vec![task("a", true, "0.5", (6, 1)), task("b", false, "0.25", (4, 0)), task("c", true, "0", (0, 0))],
            serde_json::Value::Null,
        );
        assert_eq!(r.aggregate.resolved_count, 2);
        assert!((r.aggregate.resolved_rate - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.aggregate.avg_cost_usd, "0.25".parse::<Decimal>().unwrap());
        let bash = r.tool_stats[&ToolName::Bash];
        assert_eq!((bash.calls, bash.failures), (10, 1));
        assert!((bash.failure_rate - 0.1).abs() < 1e-12);
        assert_eq!(r.tool_stats[&ToolName::Searcher].calls, 0);
        let table = render_tool_table(&r.tool_stats);
        assert!(table.contains("10.0%"));
        assert!(table.contains("(no calls)"));
        assert!(render_table(&r).contains("resolved: 2/3 (66.67%)"));
    }

    #[test]
    fn telemetry_merge_is_invocation_weighted() {
        let a = EvalReport::from_tasks("1", vec![task("a", true, "0", (10, 1))], serde_json::Value::Null);
        let b = EvalReport::from_tasks(
            "1",
            vec![task("b", true, "0", (30, 9)), task("c", true, "0", (0, 0))],
            serde_json::Value::Null,
        );
        let (tasks, merged) = merge_telemetry(&[a, b]);
        assert_eq!(tasks, 3);
        let bash = merged[&ToolName::Bash];
        // (1 + 9) / (10 + 30), not the mean of 0.1 and 0.3.
        assert!((bash.failure_rate - 0.25).abs() < 1e-12);
        assert!((bash.avg_calls_per_task - 40.0 / 3.0).abs() < 1e-12);
    }
}
