mod common;

use std::path::PathBuf;

use cofix_core::agents::TerminalReason;
use cofix_core::model::{AgentKind, TrajectoryTurn};
use cofix_core::orchestrator::{RunReport, SelectionMethod, StageConfig, Termination};
use common::{py_test, ScriptBuilder};

const TG: AgentKind = AgentKind::TestGenerator;
const CG: AgentKind = AgentKind::CodeGenerator;
const SEL: AgentKind = AgentKind::Selector;

const PARSE: &str = "configkit/parse.py";
const RAISE: &str = "raise Exception(f\"port out of range: {port}\")";

fn resolve_with(gateway: cofix_core::gateway::Gateway, task: &str, config: StageConfig) -> RunReport {
    let prompts = common::prompts();
    let sandbox = common::sandbox();
    let r = common::resolver(&gateway, &prompts, &sandbox, config);
    r.resolve(&common::task(task).public())
}

fn happy_t5(config: StageConfig) -> RunReport {
    resolve_with(common::happy_gateway(), "t5-invoice-totals", config)
}

fn range_test() -> String {
    py_test("from configkit.parse import parse_port\ntry:\n    parse_port(\"70000\")\nexcept ValueError:\n    pass\nelse:\n    raise AssertionError(\"expected ValueError\")")
}

fn bounds_test() -> String {
    py_test("from configkit.parse import parse_port\nassert parse_port(\"1\") == 1\nassert parse_port(\"65535\") == 65535")
}

#[test]
fn caps_bound_rounds() {
    for cap in 1..=3 {
        let r = happy_t5(StageConfig {
            max_iterations: cap,
            ..StageConfig::default()
        });
        assert_eq!(r.termination, Some(Termination::CapReached), "cap {cap}");
        assert_eq!(r.rounds, cap);
        assert_eq!(r.bundles.len(), cap);
        assert_eq!(r.test_generation_runs, cap);
        assert!(r.runs.iter().all(|a| a.round < cap));
    }
}

#[test]
fn reproduction_gate_rejects_passing_suite() {
    let g = ScriptBuilder::new("t3-port-exception")
        .create(TG, "tests/test_port_ok.py", &bounds_test())
        .submit(TG)
        .replace(CG, PARSE, RAISE, "raise ValueError(f\"port out of range: {port}\")")
        .submit(CG)
        .gateway();
    let r = resolve_with(g, "t3-port-exception", StageConfig::default());
    assert_eq!(r.termination, Some(Termination::NoReproducingTest));
    let check = &r.reproduction[0];
    assert!(!check.accepted);
    assert_eq!(check.test_ids, ["tests/test_port_ok.py"]);
    assert!(check.failing_on_base.is_empty());
    // The fallback fix is kept but marked unverified.
    assert_eq!(r.bundles.len(), 1);
    assert!(!r.bundles[0].verified);
    assert!(r.bundles[0].test_patches.is_empty());
    assert!(r.final_patch.contains("raise ValueError"));
    // The fallback generator sees no test material.
    let cg = r.runs.iter().find(|a| a.kind == CG).unwrap();
    let TrajectoryTurn::User { content } = &cg.trajectory.turns[0] else { panic!() };
    assert!(!content.contains("test_port_ok"));
}

#[test]
fn reproduction_gate_accepts_failing_suite() {
    let r = resolve_with(common::happy_gateway(), "t3-port-exception", StageConfig::default());
    let check = &r.reproduction[0];
    assert!(check.accepted);
    assert_eq!(check.failing_on_base, ["tests/test_port_range.py"]);
    assert!(r.bundles[0].verified);
    // The code generator is shown the failing output.
    let cg = r.runs.iter().find(|a| a.kind == CG).unwrap();
    let TrajectoryTurn::User { content } = &cg.trajectory.turns[0] else { panic!() };
    assert!(content.contains("FAIL: Exception: port out of range: 70000"), "{content}");
}

#[test]
fn test_files_in_code_submission_are_dropped() {
    let g = ScriptBuilder::new("t3-port-exception")
        .create(TG, "tests/test_port_range.py", &range_test())
        .submit(TG)
        .replace(CG, PARSE, RAISE, "raise ValueError(f\"port out of range: {port}\")")
        .replace(CG, "tests/test_parse.py", "import sys", "import sys  # touched")
        .submit(CG)
        .gateway();
    let r = resolve_with(
        g,
        "t3-port-exception",
        StageConfig {
            adversarial_enabled: false,
            ..StageConfig::default()
        },
    );
    let submitted = r.runs.iter().find(|a| a.kind == CG).unwrap().diff_text.clone().unwrap();
    assert!(submitted.contains("tests/test_parse.py"));
    assert!(r.final_patch.contains(PARSE));
    assert!(!r.final_patch.contains("tests/test_parse.py"));
    assert!(!r.bundles[0].code_patch.diff_text().contains("tests/"));
}

#[test]
fn silent_test_generator_fails_the_stage() {
    let g = ScriptBuilder::new("t3-port-exception").say(TG, "Thinking.").say(TG, "Still thinking.").gateway();
    let mut config = StageConfig::default();
    config.step_budgets.test_generator = 2;
    let r = resolve_with(g, "t3-port-exception", config);
    assert_eq!(r.termination, Some(Termination::GeneratorFailed));
    assert_eq!(r.runs[0].terminal_reason, TerminalReason::BudgetExhausted);
    assert!(r.bundles.is_empty());
    assert!(r.final_patch.is_empty());
    assert!(r.error.is_none());
}

#[test]
fn failing_code_generator_fails_the_stage() {
    // Fix does not make the reproduction pass.
    let g = ScriptBuilder::new("t3-port-exception")
        .create(TG, "tests/test_port_range.py", &range_test())
        .submit(TG)
        .replace(CG, PARSE, RAISE, "raise RuntimeError(f\"port out of range: {port}\")")
        .submit(CG)
        .gateway();
    let r = resolve_with(g, "t3-port-exception", StageConfig::default());
    assert_eq!(r.termination, Some(Termination::GeneratorFailed));
    assert!(r.bundles.is_empty());
}

#[test]
fn missing_repo_is_reported_not_raised() {
    let gateway = common::happy_gateway();
    let prompts = common::prompts();
    let sandbox = common::sandbox();
    let mut task = common::task("t1-leap-year");
    task.repo_root = PathBuf::from("/nonexistent/cofix-repo");
    let r = common::resolver(&gateway, &prompts, &sandbox, StageConfig::default()).resolve(&task.public());
    assert!(r.termination.is_none());
    assert!(r.error.as_deref().unwrap().contains("not found"));
    assert!(r.final_patch.is_empty());
    assert!(r.runs.is_empty());
}

#[test]
fn invalid_config_is_reported() {
    let r = happy_t5(StageConfig {
        max_iterations: 0,
        ..StageConfig::default()
    });
    assert!(r.termination.is_none());
    assert!(r.error.unwrap().contains("max_iterations"));
}

/// Round 0 produces a wide fix; two narrow rollouts after the suite is
/// strengthened tie exactly, so the selector decides.
fn tie_script(answer: &str) -> ScriptBuilder {
    ScriptBuilder::new("t3-port-exception")
        .create(TG, "tests/test_port_range.py", &range_test())
        .submit(TG)
        .turn(
            CG,
            "Fixing and tidying.",
            vec![
                common::replace_call(PARSE, RAISE, "raise ValueError(f\"port out of range: {port}\")"),
                common::replace_call(PARSE, "\"\"\"Parsing helpers for configuration values.\"\"\"", "\"\"\"Parsing helpers.\"\"\""),
            ],
        )
        .submit(CG)
        .create(TG, "tests/test_port_bounds.py", &bounds_test())
        .submit(TG)
        .replace(CG, PARSE, RAISE, "raise ValueError(f\"port out of range: {port}\")")
        .submit(CG)
        .replace(CG, PARSE, RAISE, "raise ValueError(f\"invalid port: {port}\")")
        .submit(CG)
        .say(SEL, answer)
}

#[test]
fn rollouts_then_selector_breaks_tie() {
    let r = resolve_with(tie_script("Both equivalent.\nSELECT 2").gateway(), "t3-port-exception", StageConfig::default());
    assert_eq!(r.termination, Some(Termination::TestsStrengthenedStillPassing));
    assert_eq!(r.bundles.len(), 3);
    assert_eq!(r.code_generation_runs, 3);
    let sel = r.selection.as_ref().unwrap();
    assert_eq!(sel.method, SelectionMethod::Selector);
    assert_eq!(sel.order, [1, 2, 0]);
    assert_eq!(r.selected_bundle, Some(2));
    assert!(r.final_patch.contains("invalid port"));
    assert_eq!(r.trajectory_count(SEL), 1);
    // The selector never gets a submitter.
    let sel_run = r.runs.iter().find(|a| a.kind == SEL).unwrap();
    assert_eq!(sel_run.terminal_reason, TerminalReason::Answered);
}

#[test]
fn unparseable_selector_answer_keeps_ranked_order() {
    let r = resolve_with(tie_script("No idea.").gateway(), "t3-port-exception", StageConfig::default());
    let sel = r.selection.unwrap();
    assert_eq!(sel.method, SelectionMethod::Ranked);
    assert_eq!(sel.selected, 1);
}

#[test]
fn selector_can_be_skipped() {
    let r = resolve_with(
        tie_script("SELECT 2").gateway(),
        "t3-port-exception",
        StageConfig {
            consult_selector: false,
            ..StageConfig::default()
        },
    );
    assert_eq!(r.selected_bundle, Some(1));
    assert_eq!(r.trajectory_count(SEL), 0);
}

#[test]
fn candidate_target_limits_rollouts() {
    let r = resolve_with(
        tie_script("SELECT 1").gateway(),
        "t3-port-exception",
        StageConfig {
            candidates_target: 2,
            ..StageConfig::default()
        },
    );
    assert_eq!(r.bundles.len(), 2);
    // Bundle 0 has the wider diff, so the rollout wins outright.
    assert_eq!(r.selection.unwrap().method, SelectionMethod::Ranked);
    assert_eq!(r.selected_bundle, Some(1));
}

#[test]
fn strengthened_suite_is_appended_to_last_bundle() {
    let r = resolve_with(tie_script("SELECT 1").gateway(), "t3-port-exception", StageConfig::default());
    let first = &r.bundles[0];
    assert_eq!(first.test_patches.len(), 2);
    assert_eq!(first.verification.len(), 2);
    assert!(first.verification.values().all(|&v| v));
}
