//! Stage 2: re-verification and ranking of candidate bundles.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{apply_all, run_tests, AgentRun, OrchestratorError, Resolver};
use crate::agents::{self, SelectorCandidate, StageState};
use crate::diff::{Diff, FileDiff};
use crate::model::{CandidateBundle, Patch, PatchKind, Producer, PublicTask};
use crate::workspace::{WorkspaceError, WorkspaceHandle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub union_passes: usize,
    pub regression_passes: usize,
    pub changed_lines: usize,
    pub iteration_created: usize,
    /// False when the code patch no longer applies or a verified bundle's own
    /// tests fail on re-run.
    pub stable: bool,
    pub passed: BTreeSet<String>,
}

impl CandidateScore {
    fn key(&self) -> (bool, Reverse<usize>, Reverse<usize>, usize, usize) {
        (
            !self.stable,
            Reverse(self.union_passes),
            Reverse(self.regression_passes),
            self.changed_lines,
            self.iteration_created,
        )
    }
}

/// Candidate indices, best first. Stable candidates precede unstable ones;
/// then union passes desc, regression passes desc, changed lines asc,
/// earliest round, and creation order.
pub fn rank(scores: &[CandidateScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by_key(|&i| (scores[i].key(), i));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    /// Only one bundle existed.
    Singleton,
    /// Selection disabled: first verified bundle, no executions.
    FirstVerified,
    Ranked,
    /// The selector agent broke an exact tie.
    Selector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected: usize,
    pub method: SelectionMethod,
    pub union_tests: Vec<String>,
    pub scores: Vec<CandidateScore>,
    pub order: Vec<usize>,
    pub executions: usize,
}

/// Merges all bundles' suites into one test patch. Each bundle's newest test
/// patch carries its whole suite; for a path present in several suites the
/// most recently created bundle's version wins.
pub fn union_suite(bundles: &[CandidateBundle]) -> Patch {
    let mut files: BTreeMap<String, FileDiff> = BTreeMap::new();
    let mut iteration = 0;
    for b in bundles {
        if let Some(suite) = b.suite() {
            iteration = iteration.max(suite.iteration());
            for f in &suite.diff().files {
                files.insert(f.path().to_string(), f.clone());
            }
        }
    }
    let diff = Diff {
        files: files.into_values().collect(),
    };
    Patch::from_diff(PatchKind::Test, diff, Producer::TestGenerator, iteration).expect("merged test patches stay test-only")
}

pub(super) fn run(
    r: &Resolver<'_>,
    task: &PublicTask,
    bundles: &[CandidateBundle],
    ws: &mut WorkspaceHandle,
) -> Result<(SelectionReport, Vec<AgentRun>), OrchestratorError> {
    let trivial = |selected, method| SelectionReport {
        selected,
        method,
        union_tests: Vec::new(),
        scores: Vec::new(),
        order: vec![selected],
        executions: 0,
    };
    match bundles.len() {
        0 => return Err(OrchestratorError::NoCandidates),
        1 => return Ok((trivial(0, SelectionMethod::Singleton), Vec::new())),
        _ => {}
    }
    if !r.config.selection_enabled {
        let first = bundles.iter().position(|b| b.verified).unwrap_or(0);
        return Ok((trivial(first, SelectionMethod::FirstVerified), Vec::new()));
    }

    let suite = union_suite(bundles);
    let union_ids = suite.test_ids();
    let mut executions = 0;
    let mut scores = Vec::with_capacity(bundles.len());
    for b in bundles {
        let score = score_bundle(ws, task, b, &suite, &union_ids, &mut executions)?;
        scores.push(score);
    }
    let order = rank(&scores);
    let best = &scores[order[0]];
    let tied: Vec<usize> = order.iter().copied().take_while(|&i| scores[i].key() == best.key()).collect();

    let mut runs = Vec::new();
    let mut selected = order[0];
    let mut method = SelectionMethod::Ranked;
    if tied.len() > 1 && r.config.consult_selector {
        ws.reset()?;
        let candidates: Vec<SelectorCandidate<'_>> = tied
            .iter()
            .enumerate()
            .map(|(n, &i)| SelectorCandidate {
                number: n + 1,
                bundle: &bundles[i],
                union_passes: scores[i].union_passes,
                union_total: union_ids.len(),
                regression_passes: scores[i].regression_passes,
            })
            .collect();
        let outcome = r.run_agent(task, &StageState::Selection { candidates: &candidates }, ws);
        runs.push(AgentRun::new(0, &outcome));
        if let Some(n) = outcome.answer.as_deref().and_then(|a| agents::parse_selection(a, tied.len())) {
            selected = tied[n - 1];
            method = SelectionMethod::Selector;
        }
    }
    Ok((
        SelectionReport {
            selected,
            method,
            union_tests: union_ids,
            scores,
            order,
            executions,
        },
        runs,
    ))
}

fn score_bundle(
    ws: &mut WorkspaceHandle,
    task: &PublicTask,
    b: &CandidateBundle,
    suite: &Patch,
    union_ids: &[String],
    executions: &mut usize,
) -> Result<CandidateScore, WorkspaceError> {
    let mut score = CandidateScore {
        union_passes: 0,
        regression_passes: 0,
        changed_lines: b.code_patch.changed_lines(),
        iteration_created: b.iteration_created,
        stable: false,
        passed: BTreeSet::new(),
    };
    match apply_all(ws, &[&b.code_patch, suite]) {
        Ok(()) => {}
        Err(WorkspaceError::PatchConflict { .. }) => return Ok(score),
        Err(e) => return Err(e),
    }
    let runs = run_tests(ws, &task.env_spec, union_ids)?;
    *executions += runs.len();
    score.passed = runs.iter().filter(|t| t.passed).map(|t| t.test_id.clone()).collect();
    score.union_passes = score.passed.len();

    // Own tests are re-run in their own version, which the union may have replaced.
    score.stable = true;
    if b.verified {
        if let Some(own) = b.suite() {
            apply_all(ws, &[&b.code_patch, own])?;
            let own_runs = run_tests(ws, &task.env_spec, &own.test_ids())?;
            *executions += own_runs.len();
            score.stable = own_runs.iter().all(|t| t.passed);
        }
    }

    apply_all(ws, &[&b.code_patch])?;
    let regression = run_tests(ws, &task.env_spec, &task.env_spec.regression_tests)?;
    *executions += regression.len();
    score.regression_passes = regression.iter().filter(|t| t.passed).count();
    Ok(score)
}
