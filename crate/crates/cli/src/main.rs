mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cofix_core::agents::prompts::{shipped_prompts_dir, PromptSet};
use cofix_core::evalkit::{self, CorpusManifest, CorpusTask, EvalReport, TaskResult};
use cofix_core::gateway::{Gateway, LiveBackend, ScriptedBackend};
use cofix_core::orchestrator::{Resolver, RunReport};
use toml::{Table, Value};

use crate::config::{BackendKind, ConfigError, Resolved};

/// Exit status for configuration and usage errors.
const EXIT_CONFIG: u8 = 2;
/// Exit status for environment failures (workspace, I/O, backend setup).
const EXIT_ENV: u8 = 1;

#[derive(Parser)]
#[command(name = "cofix", version, about = "Adversarial test/patch co-refinement for repository issues")]
struct Cli {
    /// Config file; defaults to ./cofix.toml when present.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve one task and write its patch and report.
    Run {
        /// Task directory, or a task id looked up in the corpus.
        #[arg(long, value_name = "DIR|ID")]
        task: String,
        /// Output directory for the patch and report.
        #[arg(long, value_name = "DIR", default_value = "cofix-out")]
        out: PathBuf,
        #[command(flatten)]
        flags: StageFlags,
    },
    /// Resolve and evaluate every task of a corpus.
    Eval {
        /// Directory for report.json, table.txt, patches/ and runs/.
        #[arg(long, value_name = "DIR", default_value = "cofix-report")]
        report: PathBuf,
        #[command(flatten)]
        flags: StageFlags,
    },
    /// Print tool telemetry from one or more reports.
    Stats {
        #[arg(required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args, Default)]
struct StageFlags {
    /// Corpus manifest or directory.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = ["live", "scripted"])]
    backend: Option<String>,
    /// Script file or directory of per-task scripts (scripted backend).
    #[arg(long, value_name = "PATH")]
    script: Option<PathBuf>,
    #[arg(long, value_parser = ["container", "process"])]
    isolation: Option<String>,
    #[arg(long, value_name = "N")]
    max_iterations: Option<i64>,
    /// Stop after the first test/code round.
    #[arg(long)]
    no_adversarial: bool,
    /// Take the first verified candidate without re-verification.
    #[arg(long)]
    no_selection: bool,
    #[arg(long, value_name = "N")]
    workers: Option<i64>,
    #[arg(long, value_name = "N")]
    seed: Option<i64>,
    /// Prompt template directory.
    #[arg(long, value_name = "DIR")]
    prompts: Option<PathBuf>,
}

impl StageFlags {
    /// The flag layer as a partial config table.
    fn to_table(&self) -> Table {
        let mut t = Table::new();
        let mut stage = Table::new();
        let path = |p: &Path| Value::String(p.display().to_string());
        if let Some(p) = &self.corpus {
            t.insert("corpus".into(), path(p));
        }
        if let Some(b) = &self.backend {
            t.insert("backend".into(), Value::String(b.clone()));
        }
        if let Some(p) = &self.script {
            t.insert("script".into(), path(p));
        }
        if let Some(i) = &self.isolation {
            t.insert("isolation".into(), Value::String(i.clone()));
        }
        if let Some(p) = &self.prompts {
            t.insert("prompts".into(), path(p));
        }
        if let Some(n) = self.workers {
            t.insert("worker_count".into(), Value::Integer(n));
        }
        if let Some(n) = self.seed {
            t.insert("seed".into(), Value::Integer(n));
        }
        if let Some(n) = self.max_iterations {
            stage.insert("max_iterations".into(), Value::Integer(n));
        }
        if self.no_adversarial {
            stage.insert("adversarial_enabled".into(), Value::Boolean(false));
        }
        if self.no_selection {
            stage.insert("selection_enabled".into(), Value::Boolean(false));
        }
        if !stage.is_empty() {
            t.insert("stage".into(), Value::Table(stage));
        }
        t
    }
}

/// A failure carrying the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        }
    }

    fn env(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_ENV,
            error: e.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Run { task, out, flags } => cmd_run(cli.config.as_deref(), task, out, flags),
        Command::Eval { report, flags } => cmd_eval(cli.config.as_deref(), report, flags),
        Command::Stats { reports } => cmd_stats(reports),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn resolve_config(file: Option<&Path>, flags: &StageFlags) -> Result<Resolved, Failure> {
    Ok(config::resolve(file, flags.to_table(), |k| std::env::var(k).ok())?)
}

fn load_prompts(cfg: &Resolved) -> Result<PromptSet, Failure> {
    let dir = cfg.config.prompts.clone().unwrap_or_else(shipped_prompts_dir);
    PromptSet::load(&dir).with_context(|| format!("loading prompts from {}", dir.display())).map_err(Failure::config)
}

fn build_gateway(cfg: &Resolved) -> Result<Gateway, Failure> {
    let pricing = cfg.pricing()?;
    let backend: Box<dyn cofix_core::gateway::ChatBackend> = match cfg.config.backend {
        BackendKind::Scripted => {
            let path = cfg
                .config
                .script
                .as_deref()
                .ok_or_else(|| Failure::config(anyhow::anyhow!("the scripted backend needs --script PATH")))?;
            let backend = if path.is_dir() {
                ScriptedBackend::from_dir(path)
            } else {
                ScriptedBackend::from_file(path)
            };
            Box::new(backend.with_context(|| format!("loading script {}", path.display())).map_err(Failure::config)?)
        }
        BackendKind::Live => {
            if cfg.api_key.is_none() {
                return Err(Failure::config(anyhow::anyhow!(
                    "the live backend needs an API key in ${}",
                    cfg.config.live.api_key_env
                )));
            }
            Box::new(LiveBackend::new(cfg.live()))
        }
    };
    Ok(Gateway::new(backend, pricing))
}

fn load_corpus(cfg: &Resolved) -> Result<CorpusManifest, Failure> {
    let path = cfg.config.corpus.clone().unwrap_or_else(evalkit::shipped_corpus_dir);
    evalkit::load_corpus(&path).map_err(Failure::config)
}

/// A directory holding `task.toml` is loaded directly; anything else is an id.
fn find_task(cfg: &Resolved, task: &str) -> Result<CorpusTask, Failure> {
    let dir = Path::new(task);
    if dir.join("task.toml").is_file() {
        return evalkit::load_task_dir(dir).map_err(Failure::config);
    }
    let corpus = load_corpus(cfg)?;
    corpus
        .get(task)
        .cloned()
        .ok_or_else(|| Failure::config(anyhow::anyhow!("task not found: {task}")))
}

fn cmd_run(file: Option<&Path>, task: &str, out: &Path, flags: &StageFlags) -> Outcome {
    let cfg = resolve_config(file, flags)?;
    let ct = find_task(&cfg, task)?;
    let prompts = load_prompts(&cfg)?;
    let gateway = build_gateway(&cfg)?;
    let sandbox = cfg.sandbox();
    let resolver = Resolver::new(&gateway, &prompts, &sandbox, cfg.config.stage).with_config_echo(cfg.echo());
    let report = resolver.resolve(&ct.task.public());

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(Failure::env)?;
    let patch_path = out.join(format!("{}.patch", report.task_id));
    let report_path = out.join(format!("{}.report.json", report.task_id));
    fs::write(&patch_path, &report.final_patch).map_err(|e| Failure::env(anyhow::Error::new(e).context("writing patch")))?;
    let json = serde_json::to_string_pretty(&report).map_err(Failure::env)? + "\n";
    fs::write(&report_path, json).map_err(|e| Failure::env(anyhow::Error::new(e).context("writing report")))?;

    println!("task:         {}", report.task_id);
    println!(
        "termination:  {}",
        report.termination.map_or("none", |t| t.as_str())
    );
    println!("rounds:       {}", report.rounds);
    println!("candidates:   {}", report.bundles.len());
    println!("tokens:       {} prompt, {} completion", report.prompt_tokens, report.completion_tokens);
    println!("cost:         ${}", report.cost_usd);
    println!("patch:        {}", patch_path.display());
    println!("report:       {}", report_path.display());
    println!();
    print!("{}", evalkit::render_tool_table(&evalkit::summarize_tools(&report.tool_stats, 1)));

    match &report.error {
        Some(e) => Err(Failure::env(anyhow::anyhow!("{e}"))),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_eval(file: Option<&Path>, report_dir: &Path, flags: &StageFlags) -> Outcome {
    let cfg = resolve_config(file, flags)?;
    let corpus = load_corpus(&cfg)?;
    let prompts = load_prompts(&cfg)?;
    let gateway = build_gateway(&cfg)?;
    let sandbox = cfg.sandbox();
    let resolver = Resolver::new(&gateway, &prompts, &sandbox, cfg.config.stage).with_config_echo(cfg.echo());
    let bench = evalkit::run_benchmark(&corpus, &resolver, cfg.config.worker_count);

    evalkit::write_benchmark(report_dir, &bench)
        .with_context(|| format!("writing report to {}", report_dir.display()))
        .map_err(Failure::env)?;
    print!("{}", evalkit::render_table(&bench.report));
    println!();
    print!("{}", evalkit::render_tool_table(&bench.report.tool_stats));
    println!("\nreport: {}", report_dir.join("report.json").display());

    let failed: Vec<&TaskResult> = bench.report.tasks.iter().filter(|t| t.error.is_some()).collect();
    for t in &failed {
        eprintln!("task {} did not complete: {}", t.task_id, t.error.as_deref().unwrap_or_default());
    }
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ENV)
    })
}

/// Reads an evaluation report, or a single-task run report as a one-task
/// evaluation without a verdict.
fn read_report(path: &Path) -> Result<EvalReport, Failure> {
    let eval_err = match EvalReport::load(path) {
        Ok(r) => return Ok(r),
        Err(e) => e,
    };
    let run: Option<RunReport> = fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok());
    let Some(run) = run else {
        return Err(Failure::env(eval_err));
    };
    let task = TaskResult {
        task_id: run.task_id.clone(),
        resolved: false,
        cost_usd: run.cost_usd,
        termination: run.termination,
        rounds: run.rounds,
        error: run.error.clone(),
        evaluation: None,
        tool_stats: run.tool_stats.clone(),
        test_generation_runs: run.test_generation_runs,
        code_generation_runs: run.code_generation_runs,
        stage2_executions: run.stage2_executions,
        final_patch: run.final_patch.clone(),
    };
    Ok(EvalReport::from_tasks("", vec![task], run.config))
}

fn cmd_stats(paths: &[PathBuf]) -> Outcome {
    let reports = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let (tasks, stats) = evalkit::merge_telemetry(&reports);
    println!("reports: {}   tasks: {}", reports.len(), tasks);
    print!("{}", evalkit::render_tool_table(&stats));
    Ok(ExitCode::SUCCESS)
}
