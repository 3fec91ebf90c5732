//! Solver-facing workspaces built from validated instances, and
//! higher-order instances derived from failed repairs.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::artifact::{ArtifactError, BugOrder, ValidationConfig};
use crate::diff::{self, DiffError};
use crate::evaluator::apply_instance;
use crate::prompts;
use crate::runner::{RunFailure, TestHarness};
use crate::sandbox::{self, provider::copy_tree, SandboxError, Workspace, WorkspaceProvider};
use crate::BugInstance;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("instance no longer applies to the source snapshot: {0}")]
    PatchConflict(String),
    #[error("failed patch does not apply to the buggy tree: {0}")]
    FailedPatchConflict(String),
    #[error("instance is already second order")]
    OrderLimit,
    #[error("failed patch is empty")]
    EmptyPatch,
    #[error("failed patch modifies test files: {0:?}")]
    TouchesTests(BTreeSet<String>),
    #[error("failed patch leaves {still_failing} hidden tests failing, need {required}")]
    NotFailing { still_failing: usize, required: usize },
    #[error("failed patch could not be checked: {0}")]
    Revalidation(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Sandbox(SandboxError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl From<SandboxError> for BuildError {
    fn from(e: SandboxError) -> Self {
        match e {
            SandboxError::PatchConflict(d) => BuildError::PatchConflict(d),
            other => BuildError::Sandbox(other),
        }
    }
}

#[derive(Debug)]
pub struct SolverTask {
    /// Buggy tree with a single fresh commit and no tags.
    pub workspace: Workspace,
    /// Reversed weakening: applying it restores the oracle tests.
    pub spec_patch: String,
    pub instance: BugInstance,
}

impl SolverTask {
    pub fn prompt(&self, repo_root: &str, patch_path: &str) -> String {
        prompts::solver_prompt(&self.spec_patch, repo_root, patch_path)
    }

    /// Writes `workspace/`, `task/spec.diff`, `task/instance.json` and
    /// `task/prompt.md` under `out`.
    pub fn materialize(&self, out: &Path) -> Result<PathBuf, BuildError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| BuildError::Io { path, source }
        };
        let ws_dir = out.join("workspace");
        let task_dir = out.join("task");
        if ws_dir.exists() {
            fs::remove_dir_all(&ws_dir).map_err(io(&ws_dir))?;
        }
        fs::create_dir_all(&ws_dir).map_err(io(&ws_dir))?;
        fs::create_dir_all(&task_dir).map_err(io(&task_dir))?;
        copy_tree(self.workspace.root(), &ws_dir)?;
        let spec = task_dir.join("spec.diff");
        fs::write(&spec, &self.spec_patch).map_err(io(&spec))?;
        self.instance.save(&task_dir.join("instance.json"))?;
        let prompt = task_dir.join("prompt.md");
        let text = self.prompt(&ws_dir.display().to_string(), "pred_patch.diff");
        fs::write(&prompt, text).map_err(io(&prompt))?;
        Ok(ws_dir)
    }
}

/// Clone, inject the bug, weaken the tests, layer the failed prediction for
/// order-2 instances, then wipe history.
pub fn build_solver_task(
    instance: &BugInstance,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
) -> Result<SolverTask, BuildError> {
    let spec_patch = instance.spec_patch()?;
    let mut ws = provider.clone_workspace(source)?;
    apply_instance(&ws, instance)?;
    sandbox::reinit_history(&mut ws)?;
    Ok(SolverTask {
        workspace: ws,
        spec_patch,
        instance: instance.clone(),
    })
}

/// Second-order instance: the parent's bug with a failed repair on top.
///
/// Scripts, test files and both test sets are inherited. The composed tree
/// must still fail at least `min_failing_tests` of the hidden tests.
pub fn derive_higher_order(
    instance: &BugInstance,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    failed_patch: &str,
    config: &ValidationConfig,
) -> Result<BugInstance, BuildError> {
    let parent = &instance.artifact;
    if parent.order != BugOrder::First {
        return Err(BuildError::OrderLimit);
    }
    let paths = diff::patch_paths(failed_patch)?;
    if paths.is_empty() {
        return Err(BuildError::EmptyPatch);
    }
    let touched: BTreeSet<String> = paths.intersection(&parent.test_file_set()).cloned().collect();
    if !touched.is_empty() {
        return Err(BuildError::TouchesTests(touched));
    }

    let mut artifact = parent.clone();
    artifact.order = BugOrder::Second;
    artifact.parent_pred_patch = Some(failed_patch.to_owned());
    let derived = BugInstance {
        artifact,
        ..instance.clone()
    };

    let ws = provider.clone_workspace(source)?;
    sandbox::apply_patch(&ws, &parent.bug_inject_patch, false)?;
    sandbox::apply_patch(&ws, &parent.test_weaken_patch, false)?;
    sandbox::apply_patch(&ws, failed_patch, false).map_err(|e| match e {
        SandboxError::PatchConflict(d) => BuildError::FailedPatchConflict(d),
        SandboxError::MalformedDiff(d) => BuildError::Diff(d),
        other => BuildError::Sandbox(other),
    })?;
    // Hidden tests are checked against the oracle versions.
    sandbox::apply_patch(&ws, &parent.test_weaken_patch, true)?;
    let harness = TestHarness::new(parent, config.limits)?;
    let run = harness.run(&ws).map_err(|e| match e {
        RunFailure::Infra(e) => BuildError::Sandbox(e),
        other => BuildError::Revalidation(other.to_string()),
    })?;
    let still_failing = instance
        .fail_to_pass
        .iter()
        .filter(|t| !run.statuses.is_passed(t))
        .count();
    if still_failing < config.min_failing_tests.max(1) {
        return Err(BuildError::NotFailing {
            still_failing,
            required: config.min_failing_tests.max(1),
        });
    }
    Ok(derived)
}
