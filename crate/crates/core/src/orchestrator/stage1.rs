//! Stage 1: adversarial test/code refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{apply_all, failure_report, run_tests, split_submission, verdicts, AgentRun, Resolver, Termination};
use crate::agents::{AgentOutcome, StageState};
use crate::model::{CandidateBundle, Patch, PatchKind, Producer, PublicTask};
use crate::workspace::{WorkspaceError, WorkspaceHandle};

/// A fix and the verdicts of the suite it was checked against.
type VerifiedFix = (Patch, BTreeMap<String, bool>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Outcome {
    pub bundles: Vec<CandidateBundle>,
    pub termination: Termination,
    pub rounds: usize,
    pub reproduction: Vec<ReproductionCheck>,
    pub runs: Vec<AgentRun>,
    pub test_generation_runs: usize,
    pub code_generation_runs: usize,
}

/// Result of running a freshly generated suite on the unpatched tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproductionCheck {
    pub round: usize,
    pub test_ids: Vec<String>,
    pub failing_on_base: Vec<String>,
    pub accepted: bool,
}

struct Loop<'r, 'a> {
    r: &'r Resolver<'a>,
    task: &'r PublicTask,
    bundles: Vec<CandidateBundle>,
    reproduction: Vec<ReproductionCheck>,
    runs: Vec<AgentRun>,
    test_runs: usize,
    code_runs: usize,
}

enum Verified {
    Pass(BTreeMap<String, bool>),
    Fail,
}

impl Loop<'_, '_> {
    fn agent(&mut self, round: usize, state: StageState<'_>, ws: &mut WorkspaceHandle) -> AgentOutcome {
        let outcome = self.r.run_agent(self.task, &state, ws);
        match state {
            StageState::TestGeneration { .. } => self.test_runs += 1,
            _ => self.code_runs += 1,
        }
        self.runs.push(AgentRun::new(round, &outcome));
        outcome
    }

    /// Runs `tests` on top of `code` on a reset tree.
    fn check(&self, ws: &mut WorkspaceHandle, code: &Patch, tests: &Patch) -> Result<Verified, WorkspaceError> {
        match apply_all(ws, &[code, tests]) {
            Ok(()) => {}
            Err(WorkspaceError::PatchConflict { .. }) => return Ok(Verified::Fail),
            Err(e) => return Err(e),
        }
        let runs = run_tests(ws, &self.task.env_spec, &tests.test_ids())?;
        Ok(if runs.iter().all(|t| t.passed) {
            Verified::Pass(verdicts(&runs))
        } else {
            Verified::Fail
        })
    }

    /// Code generation on top of `code` + `tests`; returns the verified new
    /// cumulative code patch.
    fn generate_code(
        &mut self,
        ws: &mut WorkspaceHandle,
        round: usize,
        code: &Patch,
        tests: &Patch,
        test_output: &str,
    ) -> Result<Option<VerifiedFix>, WorkspaceError> {
        apply_all(ws, &[code, tests])?;
        let state = StageState::CodeGeneration {
            round,
            test_patch: Some(tests.diff_text()),
            test_output: Some(test_output),
            code_patch: Some(code.diff_text()),
        };
        let outcome = self.agent(round, state, ws);
        let Some(text) = outcome.diff_text.filter(|_| outcome.submitted) else {
            return Ok(None);
        };
        let new_code = match split_submission(&text, round, Producer::CodeGenerator) {
            Ok((c, _)) if !c.is_empty() => c,
            _ => return Ok(None),
        };
        Ok(match self.check(ws, &new_code, tests)? {
            Verified::Pass(v) => Some((new_code, v)),
            Verified::Fail => None,
        })
    }

    fn finish(self, termination: Termination, rounds: usize) -> Stage1Outcome {
        Stage1Outcome {
            bundles: self.bundles,
            termination,
            rounds,
            reproduction: self.reproduction,
            runs: self.runs,
            test_generation_runs: self.test_runs,
            code_generation_runs: self.code_runs,
        }
    }
}

fn bundle(code: Patch, tests: &Patch, verification: BTreeMap<String, bool>, round: usize, verified: bool) -> CandidateBundle {
    let test_patches = if tests.is_empty() { Vec::new() } else { vec![tests.clone()] };
    CandidateBundle::assemble(code, test_patches, verification, round, verified).expect("patch kinds checked on construction")
}

pub(super) fn run(r: &Resolver<'_>, task: &PublicTask, ws: &mut WorkspaceHandle) -> Result<Stage1Outcome, WorkspaceError> {
    let cfg = r.config;
    let mut lp = Loop {
        r,
        task,
        bundles: Vec::new(),
        reproduction: Vec::new(),
        runs: Vec::new(),
        test_runs: 0,
        code_runs: 0,
    };
    let mut code = Patch::empty(PatchKind::Code, Producer::CodeGenerator, 0);
    let mut tests = Patch::empty(PatchKind::Test, Producer::TestGenerator, 0);
    let mut test_output = String::new();

    for round in 0..cfg.max_iterations {
        let rounds = round + 1;
        apply_all(ws, &[&code, &tests])?;
        let state = StageState::TestGeneration {
            round,
            code_patch: Some(code.diff_text()),
            test_patch: Some(tests.diff_text()),
            test_output: Some(&test_output),
        };
        let outcome = lp.agent(round, state, ws);
        if !outcome.submitted {
            return Ok(lp.finish(Termination::GeneratorFailed, rounds));
        }
        let candidate = match split_submission(outcome.diff_text.as_deref().unwrap_or_default(), round, Producer::TestGenerator) {
            Ok((_, t)) => t,
            Err(_) => return Ok(lp.finish(Termination::GeneratorFailed, rounds)),
        };
        let ids = candidate.test_ids();

        if round == 0 {
            apply_all(ws, &[&candidate])?;
            let base_runs = run_tests(ws, &task.env_spec, &ids)?;
            let failing: Vec<String> = base_runs.iter().filter(|t| !t.passed).map(|t| t.test_id.clone()).collect();
            let accepted = !failing.is_empty();
            lp.reproduction.push(ReproductionCheck {
                round,
                test_ids: ids.clone(),
                failing_on_base: failing,
                accepted,
            });
            if !accepted {
                // Fall back to a single fix attempt from the issue text alone.
                ws.reset()?;
                let state = StageState::CodeGeneration {
                    round,
                    test_patch: None,
                    test_output: None,
                    code_patch: None,
                };
                let outcome = lp.agent(round, state, ws);
                if let Some(text) = outcome.diff_text.filter(|_| outcome.submitted) {
                    if let Ok((c, _)) = split_submission(&text, round, Producer::CodeGenerator) {
                        if !c.is_empty() {
                            let empty = Patch::empty(PatchKind::Test, Producer::TestGenerator, round);
                            lp.bundles.push(bundle(c, &empty, BTreeMap::new(), round, false));
                        }
                    }
                }
                return Ok(lp.finish(Termination::NoReproducingTest, rounds));
            }
            test_output = failure_report(&base_runs);
        } else {
            apply_all(ws, &[&code, &candidate])?;
            let runs = run_tests(ws, &task.env_spec, &ids)?;
            if runs.iter().all(|t| t.passed) {
                if let Some(last) = lp.bundles.last_mut() {
                    last.test_patches.push(candidate.clone());
                    last.verification.extend(verdicts(&runs));
                }
                tests = candidate;
                extra_rollouts(&mut lp, ws, round, &tests)?;
                return Ok(lp.finish(Termination::TestsStrengthenedStillPassing, rounds));
            }
            test_output = failure_report(&runs);
        }
        tests = candidate;

        match lp.generate_code(ws, round, &code, &tests, &test_output)? {
            Some((new_code, verification)) => {
                lp.bundles.push(bundle(new_code.clone(), &tests, verification, round, true));
                code = new_code;
            }
            None => return Ok(lp.finish(Termination::GeneratorFailed, rounds)),
        }
        if !cfg.adversarial_enabled {
            return Ok(lp.finish(Termination::CapReached, rounds));
        }
    }
    Ok(lp.finish(Termination::CapReached, cfg.max_iterations))
}

/// Independent fixes against the final suite, until the candidate target is
/// met or one attempt fails.
fn extra_rollouts(lp: &mut Loop<'_, '_>, ws: &mut WorkspaceHandle, round: usize, tests: &Patch) -> Result<(), WorkspaceError> {
    if lp.bundles.len() >= lp.r.config.candidates_target {
        return Ok(());
    }
    apply_all(ws, &[tests])?;
    let base_output = failure_report(&run_tests(ws, &lp.task.env_spec, &tests.test_ids())?);
    let none = Patch::empty(PatchKind::Code, Producer::CodeGenerator, round);
    while lp.bundles.len() < lp.r.config.candidates_target {
        match lp.generate_code(ws, round, &none, tests, &base_output)? {
            Some((code, verification)) => lp.bundles.push(bundle(code, tests, verification, round, true)),
            None => break,
        }
    }
    Ok(())
}
