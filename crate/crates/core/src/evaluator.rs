//! Grades a predicted fix: rebuild the buggy tree, apply the prediction,
//! put the original tests back, run them, and compare against the instance.

use serde::{Deserialize, Serialize};

use crate::artifact::{BugInstance, RunLimits};
use crate::runner::{RunFailure, TestHarness};
use crate::sandbox::{self, SandboxError, Workspace, WorkspaceProvider, ORIGINAL_TAG};
use crate::status::TestStatusMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    PatchConflict,
    TestsFailed,
    ScriptTimeout,
    ParserViolation,
    SystemError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub f2p_passed: usize,
    pub f2p_total: usize,
    pub p2p_passed: usize,
    pub p2p_total: usize,
}

impl Counts {
    pub fn all_passed(&self) -> bool {
        self.f2p_passed == self.f2p_total && self.p2p_passed == self.p2p_total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub success: bool,
    pub statuses: TestStatusMap,
    #[serde(flatten)]
    pub counts: Counts,
    pub failure_kind: FailureKind,
    pub reward: i32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl SolveOutcome {
    fn failed(kind: FailureKind, counts: Counts, detail: String) -> Self {
        SolveOutcome {
            success: false,
            statuses: TestStatusMap::new(),
            counts,
            failure_kind: kind,
            reward: -1,
            detail,
        }
    }

    pub fn system_error(instance: &BugInstance, detail: String) -> Self {
        SolveOutcome::failed(FailureKind::SystemError, totals(instance), detail)
    }

    pub fn is_system_error(&self) -> bool {
        self.failure_kind == FailureKind::SystemError
    }

    pub fn exit_code(&self) -> i32 {
        match self.failure_kind {
            FailureKind::None => 0,
            FailureKind::SystemError => 3,
            _ => 1,
        }
    }
}

/// Success iff every fail-to-pass and pass-to-pass test passed. Ids missing
/// from `statuses` count as failed; ids outside both sets are ignored.
pub fn classify(statuses: &TestStatusMap, instance: &BugInstance) -> (bool, Counts) {
    let passed = |set: &std::collections::BTreeSet<String>| set.iter().filter(|t| statuses.is_passed(t)).count();
    let counts = Counts {
        f2p_passed: passed(&instance.fail_to_pass),
        f2p_total: instance.fail_to_pass.len(),
        p2p_passed: passed(&instance.pass_to_pass),
        p2p_total: instance.pass_to_pass.len(),
    };
    (counts.all_passed(), counts)
}

fn totals(instance: &BugInstance) -> Counts {
    Counts {
        f2p_total: instance.fail_to_pass.len(),
        p2p_total: instance.pass_to_pass.len(),
        ..Counts::default()
    }
}

/// Applies the instance's bug (and, for order 2, the failed prediction it
/// builds on) plus the test weakening to `ws`.
pub(crate) fn apply_instance(ws: &Workspace, instance: &BugInstance) -> Result<(), SandboxError> {
    let a = &instance.artifact;
    sandbox::apply_patch(ws, &a.bug_inject_patch, false)?;
    sandbox::apply_patch(ws, &a.test_weaken_patch, false)?;
    if let Some(pred) = &a.parent_pred_patch {
        sandbox::apply_patch(ws, pred, false)?;
    }
    Ok(())
}

/// Never fails: every outcome, including infrastructure faults, is encoded
/// in `failure_kind`.
pub fn evaluate(
    instance: &BugInstance,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    prediction: &str,
    limits: &RunLimits,
) -> SolveOutcome {
    match provider.clone_workspace(source) {
        Ok(mut ws) => evaluate_in(instance, &mut ws, prediction, limits),
        Err(e) => SolveOutcome::failed(
            FailureKind::SystemError,
            totals(instance),
            format!("cloning source: {e}"),
        ),
    }
}

/// Runs the evaluation pipeline in `ws`, which must be a fresh copy of the
/// pristine source. The tree is left as graded.
pub fn evaluate_in(
    instance: &BugInstance,
    ws: &mut Workspace,
    prediction: &str,
    limits: &RunLimits,
) -> SolveOutcome {
    let system = |what: &str, e: &dyn std::fmt::Display| {
        SolveOutcome::failed(FailureKind::SystemError, totals(instance), format!("{what}: {e}"))
    };
    let harness = match TestHarness::new(&instance.artifact, *limits) {
        Ok(h) => h,
        Err(e) => return system("writing test harness", &e),
    };
    if let Err(e) = sandbox::tag_state(ws, ORIGINAL_TAG) {
        return system("tagging original state", &e);
    }
    // The instance was validated against this source; a conflict here means
    // the snapshot changed underneath it.
    if let Err(e) = apply_instance(ws, instance) {
        return system("rebuilding buggy tree", &e);
    }
    match sandbox::apply_patch(ws, prediction, false) {
        Ok(()) => {}
        Err(e) if e.is_content_fault() => {
            return SolveOutcome::failed(FailureKind::PatchConflict, totals(instance), e.to_string())
        }
        Err(e) => return system("applying prediction", &e),
    }
    if let Err(e) = sandbox::restore_paths(ws, ORIGINAL_TAG, &instance.artifact.test_files) {
        return system("restoring test files", &e);
    }
    let run = match harness.run(ws) {
        Ok(run) => run,
        Err(RunFailure::ScriptTimeout(t)) => {
            return SolveOutcome::failed(
                FailureKind::ScriptTimeout,
                totals(instance),
                format!("test script timed out after {t:?}"),
            )
        }
        Err(RunFailure::Infra(e)) => return system("running tests", &e),
        Err(e) => return SolveOutcome::failed(FailureKind::ParserViolation, totals(instance), e.to_string()),
    };
    let (success, counts) = classify(&run.statuses, instance);
    SolveOutcome {
        success,
        statuses: run.statuses,
        counts,
        failure_kind: if success {
            FailureKind::None
        } else {
            FailureKind::TestsFailed
        },
        reward: if success { 1 } else { -1 },
        detail: String::new(),
    }
}
