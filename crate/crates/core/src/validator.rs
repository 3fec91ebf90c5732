//! Consistency validation: seven ordered checks that execute a bug artifact
//! against a pristine snapshot and either reject it or produce a task.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::artifact::{check_repo_relative, BugArtifact, BugInstance, ValidationConfig};
use crate::diff;
use crate::runner::{RunFailure, TestHarness, TestRun};
use crate::sandbox::{self, SandboxError, Workspace, WorkspaceProvider, ORIGINAL_TAG};
use crate::status::{TestStatus, TestStatusMap};

/// Internal tag for the bug-applied, unweakened state.
pub const BUGGY_TAG: &str = "ssr-buggy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    FilesExistAndCover,
    ParserValid,
    ScriptValid,
    BugScope,
    BugValid,
    WeakenValid,
    InverseMutation,
}

impl CheckName {
    pub const ALL: [CheckName; 7] = [
        CheckName::FilesExistAndCover,
        CheckName::ParserValid,
        CheckName::ScriptValid,
        CheckName::BugScope,
        CheckName::BugValid,
        CheckName::WeakenValid,
        CheckName::InverseMutation,
    ];

    /// One-based position in the canonical order.
    pub fn number(self) -> usize {
        CheckName::ALL.iter().position(|c| *c == self).unwrap() + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::FilesExistAndCover => "files_exist_and_cover",
            CheckName::ParserValid => "parser_valid",
            CheckName::ScriptValid => "script_valid",
            CheckName::BugScope => "bug_scope",
            CheckName::BugValid => "bug_valid",
            CheckName::WeakenValid => "weaken_valid",
            CheckName::InverseMutation => "inverse_mutation",
        }
    }
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: CheckName,
    pub outcome: CheckOutcome,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    SystemError,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Valid => 0,
            Verdict::Invalid => 2,
            Verdict::SystemError => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub artifact_id: String,
    pub verdict: Verdict,
    pub checks: Vec<CheckResult>,
    pub baseline_statuses: Option<TestStatusMap>,
    pub buggy_statuses: Option<TestStatusMap>,
    pub weakened_statuses: Option<TestStatusMap>,
    /// Inverse-mutation result per bug-patch file.
    pub contributions: BTreeMap<String, bool>,
    pub instance: Option<BugInstance>,
    /// Infrastructure fault behind a `system_error` verdict.
    pub error: Option<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }

    pub fn check(&self, name: CheckName) -> &CheckResult {
        &self.checks[name.number() - 1]
    }

    pub fn first_failure(&self) -> Option<CheckName> {
        self.checks
            .iter()
            .find(|c| c.outcome == CheckOutcome::Fail)
            .map(|c| c.name)
    }

    pub fn passed_count(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.outcome == CheckOutcome::Pass)
            .count()
    }
}

enum Halt {
    Fail(CheckName, String),
    System(CheckName, String),
}

type Step<T> = Result<T, Halt>;

fn sandbox_halt(check: CheckName, what: &str, e: SandboxError) -> Halt {
    if e.is_content_fault() {
        Halt::Fail(check, format!("{what}: {e}"))
    } else {
        Halt::System(check, format!("{what}: {e}"))
    }
}

fn run_halt(check: CheckName, stage: &str, e: RunFailure) -> Halt {
    match e {
        RunFailure::Infra(e) => sandbox_halt(check, stage, e),
        other => Halt::Fail(check, format!("{stage}: {other}")),
    }
}

fn sys(check: CheckName) -> impl Fn(SandboxError) -> Halt {
    move |e| Halt::System(check, e.to_string())
}

/// Test ids in `candidates` that are not passed in `statuses` (absent = failed).
fn not_passed(candidates: &BTreeSet<String>, statuses: &TestStatusMap) -> BTreeSet<String> {
    candidates
        .iter()
        .filter(|t| !statuses.is_passed(t))
        .cloned()
        .collect()
}

fn sample(ids: &BTreeSet<String>) -> String {
    const SHOWN: usize = 5;
    let mut s: Vec<&str> = ids.iter().take(SHOWN).map(String::as_str).collect();
    if ids.len() > SHOWN {
        s.push("...");
    }
    s.join(", ")
}

struct Pipeline<'a> {
    artifact: &'a BugArtifact,
    source: &'a Workspace,
    config: &'a ValidationConfig,
    passes: Vec<(CheckName, String)>,
    baseline: Option<TestStatusMap>,
    buggy: Option<TestStatusMap>,
    weakened: Option<TestStatusMap>,
    contributions: BTreeMap<String, bool>,
}

/// Runs the seven checks in order against a fresh clone of `source`.
///
/// Every problem attributable to the artifact is a check failure; only
/// infrastructure faults produce `Verdict::SystemError`.
pub fn validate(
    artifact: &BugArtifact,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    config: &ValidationConfig,
) -> ValidationReport {
    let mut p = Pipeline {
        artifact,
        source,
        config,
        passes: Vec::new(),
        baseline: None,
        buggy: None,
        weakened: None,
        contributions: BTreeMap::new(),
    };
    let outcome = p.run(provider);
    let (verdict, halted_at, detail, error) = match &outcome {
        Ok(_) => (Verdict::Valid, None, String::new(), None),
        Err(Halt::Fail(c, d)) => (Verdict::Invalid, Some(*c), d.clone(), None),
        Err(Halt::System(c, d)) => (Verdict::SystemError, Some(*c), String::new(), Some(d.clone())),
    };
    let mut checks: Vec<CheckResult> = p
        .passes
        .iter()
        .map(|(name, d)| CheckResult {
            name: *name,
            outcome: CheckOutcome::Pass,
            detail: d.clone(),
        })
        .collect();
    for name in CheckName::ALL.into_iter().skip(checks.len()) {
        let outcome = if Some(name) == halted_at && verdict == Verdict::Invalid {
            CheckOutcome::Fail
        } else {
            CheckOutcome::Skipped
        };
        let detail = if outcome == CheckOutcome::Fail {
            detail.clone()
        } else {
            String::new()
        };
        checks.push(CheckResult {
            name,
            outcome,
            detail,
        });
    }
    ValidationReport {
        artifact_id: artifact.id(),
        verdict,
        checks,
        baseline_statuses: p.baseline,
        buggy_statuses: p.buggy,
        weakened_statuses: p.weakened,
        contributions: p.contributions,
        instance: outcome.ok(),
        error,
    }
}

impl Pipeline<'_> {
    fn pass(&mut self, name: CheckName, detail: impl Into<String>) {
        debug_assert_eq!(self.passes.len() + 1, name.number());
        self.passes.push((name, detail.into()));
    }

    fn run(&mut self, provider: &dyn WorkspaceProvider) -> Step<BugInstance> {
        use CheckName::*;
        let a = self.artifact;
        let test_files = a.test_file_set();

        // 1
        let weaken_paths = self.files_exist_and_cover(&test_files)?;
        self.pass(
            FilesExistAndCover,
            format!("{} test files present; weakening touches {}", test_files.len(), weaken_paths.len()),
        );

        let harness = TestHarness::new(a, self.config.limits).map_err(sys(ParserValid))?;
        let mut ws = provider.clone_workspace(self.source).map_err(sys(ParserValid))?;
        sandbox::tag_state(&mut ws, ORIGINAL_TAG).map_err(sys(ParserValid))?;

        // 2 and 3 share one execution.
        let first = match harness.run(&ws) {
            Ok(run) => Ok(run),
            Err(e) if e.is_parser_fault() => {
                return Err(Halt::Fail(ParserValid, format!("parser on baseline log: {e}")))
            }
            Err(e) => Err(e),
        };
        let statuses_len = first.as_ref().map(|r| r.statuses.len()).unwrap_or(0);
        self.pass(ParserValid, format!("parsed {statuses_len} test statuses from the baseline log"));
        let first = first.map_err(|e| run_halt(ScriptValid, "baseline run", e))?;
        let baseline_passed = self.script_valid(&harness, &ws, &first)?;
        self.baseline = Some(first.statuses.clone());
        self.pass(ScriptValid, format!("{} tests pass on the original tree", baseline_passed.len()));

        // 4
        let bug_paths = self.bug_scope(&test_files)?;
        self.pass(
            BugScope,
            format!("bug patch changes {} non-test files", bug_paths.len()),
        );

        let mut watched: BTreeSet<String> = test_files.clone();
        watched.extend(bug_paths.iter().cloned());
        watched.extend(weaken_paths.iter().cloned());
        if let Some(pred) = &a.parent_pred_patch {
            watched.extend(diff::patch_paths(pred).unwrap_or_default());
        }
        let watched: Vec<String> = watched.into_iter().collect();
        let pristine_digest = self.source.paths_digest(&watched).map_err(sys(BugValid))?;

        // 5
        self.reset_to(&ws, ORIGINAL_TAG, &watched, &pristine_digest, BugValid)?;
        sandbox::apply_patch(&ws, &a.bug_inject_patch, false)
            .map_err(|e| sandbox_halt(BugValid, "applying bug patch", e))?;
        if let Some(pred) = &a.parent_pred_patch {
            sandbox::apply_patch(&ws, pred, false)
                .map_err(|e| sandbox_halt(BugValid, "applying failed prediction", e))?;
        }
        sandbox::tag_state(&mut ws, BUGGY_TAG).map_err(sys(BugValid))?;
        let buggy_digest = ws.paths_digest(&watched).map_err(sys(BugValid))?;
        let buggy = harness
            .run(&ws)
            .map_err(|e| run_halt(BugValid, "buggy run", e))?;
        self.buggy = Some(buggy.statuses.clone());
        let failing = not_passed(&baseline_passed, &buggy.statuses);
        let newcomers = new_ids(&first.statuses, &buggy.statuses);
        if failing.len() < self.config.min_failing_tests {
            return Err(Halt::Fail(
                BugValid,
                format!(
                    "{} originally passing tests fail after the bug, need at least {}",
                    failing.len(),
                    self.config.min_failing_tests
                ),
            ));
        }
        let mut detail = format!("{} tests broken: {}", failing.len(), sample(&failing));
        if !newcomers.is_empty() {
            detail += &format!("; ignored {} tests absent from the baseline", newcomers.len());
        }
        self.pass(BugValid, detail);

        // 6
        sandbox::apply_patch(&ws, &a.test_weaken_patch, false)
            .map_err(|e| sandbox_halt(WeakenValid, "applying weakening patch", e))?;
        let weakened = harness
            .run(&ws)
            .map_err(|e| run_halt(WeakenValid, "weakened run", e))?;
        self.weakened = Some(weakened.statuses.clone());
        let flipped: BTreeSet<String> = failing
            .iter()
            .filter(|t| weakened.statuses.is_passed(t))
            .cloned()
            .collect();
        if flipped.is_empty() {
            return Err(Halt::Fail(
                WeakenValid,
                "no test broken by the bug passes after weakening".into(),
            ));
        }
        let residual = failing.len() - flipped.len();
        self.pass(
            WeakenValid,
            format!("{} broken tests hidden by weakening, {residual} still failing", flipped.len()),
        );

        // 7
        let per_file = contributions(&ws, &harness, &bug_paths, &failing, &watched, &buggy_digest)?;
        let idle: Vec<&str> = per_file
            .iter()
            .filter(|(_, c)| !**c)
            .map(|(f, _)| f.as_str())
            .collect();
        self.contributions = per_file.clone();
        if !idle.is_empty() {
            return Err(Halt::Fail(
                InverseMutation,
                format!("reverting {} alone fixes no broken test", idle.join(", ")),
            ));
        }
        self.pass(
            InverseMutation,
            format!("all {} bug-patch files contribute", per_file.len()),
        );

        let pass_to_pass: BTreeSet<String> = baseline_passed
            .iter()
            .filter(|t| buggy.statuses.is_passed(t))
            .cloned()
            .collect();
        let base_ref = self.source.head().map_err(sys(InverseMutation))?.unwrap_or_default();
        let instance = BugInstance {
            artifact: a.clone(),
            base_ref,
            fail_to_pass: failing,
            pass_to_pass,
            baseline_statuses: first.statuses,
            buggy_statuses: buggy.statuses,
        };
        instance
            .check_invariants()
            .map_err(|e| Halt::System(InverseMutation, e.to_string()))?;
        Ok(instance)
    }

    fn files_exist_and_cover(&self, test_files: &BTreeSet<String>) -> Step<BTreeSet<String>> {
        let fail = |d: String| Halt::Fail(CheckName::FilesExistAndCover, d);
        self.artifact.check_structure().map_err(|e| fail(e.to_string()))?;
        let missing: BTreeSet<String> = test_files
            .iter()
            .filter(|f| !self.source.root().join(f).is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(fail(format!("listed test files missing from the repository: {}", sample(&missing))));
        }
        let weaken = self.artifact.weaken_paths().map_err(|e| fail(e.to_string()))?;
        let uncovered: BTreeSet<String> = weaken.difference(test_files).cloned().collect();
        if !uncovered.is_empty() {
            return Err(fail(format!(
                "weakening patch touches files not listed as tests: {}",
                sample(&uncovered)
            )));
        }
        Ok(weaken)
    }

    fn script_valid(
        &self,
        harness: &TestHarness,
        ws: &Workspace,
        first: &TestRun,
    ) -> Step<BTreeSet<String>> {
        let fail = |d: String| Halt::Fail(CheckName::ScriptValid, d);
        let failed = first.statuses.failed();
        if !failed.is_empty() {
            return Err(fail(format!(
                "{} tests fail on the original tree: {}",
                failed.len(),
                sample(&failed)
            )));
        }
        let passed = first.statuses.passed();
        if passed.len() < self.config.min_passing_tests {
            return Err(fail(format!(
                "{} passing tests, need at least {}",
                passed.len(),
                self.config.min_passing_tests
            )));
        }
        // Repeat the baseline: any status change without a patch is flakiness.
        let again = harness
            .run(ws)
            .map_err(|e| run_halt(CheckName::ScriptValid, "baseline rerun", e))?;
        if again.statuses != first.statuses {
            let changed: BTreeSet<String> = first
                .statuses
                .ids()
                .chain(again.statuses.ids())
                .filter(|t| first.statuses.get(t) != again.statuses.get(t))
                .map(str::to_owned)
                .collect();
            return Err(fail(format!("nondeterministic test: {}", sample(&changed))));
        }
        Ok(passed)
    }

    fn bug_scope(&self, test_files: &BTreeSet<String>) -> Step<BTreeSet<String>> {
        let fail = |d: String| Halt::Fail(CheckName::BugScope, d);
        let paths = self.artifact.bug_paths().map_err(|e| fail(e.to_string()))?;
        for p in &paths {
            check_repo_relative(p).map_err(|e| fail(e.to_string()))?;
        }
        let overlap: BTreeSet<String> = paths.intersection(test_files).cloned().collect();
        if !overlap.is_empty() {
            return Err(fail(format!("bug patch modifies test files: {}", sample(&overlap))));
        }
        if paths.len() < self.config.min_changed_files {
            return Err(fail(format!(
                "bug patch changes {} files, need at least {}",
                paths.len(),
                self.config.min_changed_files
            )));
        }
        if let Some(pred) = &self.artifact.parent_pred_patch {
            let pred_paths = diff::patch_paths(pred).map_err(|e| fail(format!("failed prediction: {e}")))?;
            let touched: BTreeSet<String> = pred_paths.intersection(test_files).cloned().collect();
            if !touched.is_empty() {
                return Err(fail(format!("failed prediction modifies test files: {}", sample(&touched))));
            }
        }
        Ok(paths)
    }

    fn reset_to(
        &self,
        ws: &Workspace,
        tag: &str,
        watched: &[String],
        expected: &str,
        check: CheckName,
    ) -> Step<()> {
        reset_watched(ws, tag, watched, expected).map_err(|e| Halt::System(check, e))
    }
}

fn new_ids(base: &TestStatusMap, later: &TestStatusMap) -> BTreeSet<String> {
    later
        .ids()
        .filter(|t| base.get(t).is_none())
        .map(str::to_owned)
        .collect()
}

/// Restores the watched paths from `tag` and confirms the expected digest.
fn reset_watched(ws: &Workspace, tag: &str, watched: &[String], expected: &str) -> Result<(), String> {
    sandbox::restore_paths(ws, tag, watched).map_err(|e| e.to_string())?;
    let actual = ws.paths_digest(watched).map_err(|e| e.to_string())?;
    if actual != expected {
        return Err(format!("workspace state mismatch after reset to {tag}"));
    }
    Ok(())
}

/// For each bug file: from the buggy state, revert only that file and
/// rerun the unweakened tests. A file contributes if any broken test passes.
fn contributions(
    ws: &Workspace,
    harness: &TestHarness,
    bug_paths: &BTreeSet<String>,
    failing: &BTreeSet<String>,
    watched: &[String],
    buggy_digest: &str,
) -> Step<BTreeMap<String, bool>> {
    let check = CheckName::InverseMutation;
    let mut out = BTreeMap::new();
    for f in bug_paths {
        reset_watched(ws, BUGGY_TAG, watched, buggy_digest).map_err(|e| Halt::System(check, e))?;
        sandbox::restore_paths(ws, ORIGINAL_TAG, std::slice::from_ref(f)).map_err(sys(check))?;
        let run = harness
            .run(ws)
            .map_err(|e| run_halt(check, &format!("run with {f} reverted"), e))?;
        let fixed = failing.iter().any(|t| run.statuses.get(t) == Some(TestStatus::Passed));
        out.insert(f.clone(), fixed);
    }
    reset_watched(ws, BUGGY_TAG, watched, buggy_digest).map_err(|e| Halt::System(check, e))?;
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum InverseMutationError {
    #[error("bug state could not be built: {0}")]
    Setup(String),
    #[error("infrastructure fault: {0}")]
    System(String),
}

/// Standalone inverse mutation check on a fresh clone of `source`.
pub fn inverse_mutation_check(
    artifact: &BugArtifact,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    failing: &BTreeSet<String>,
    config: &ValidationConfig,
) -> Result<BTreeMap<String, bool>, InverseMutationError> {
    let setup = |e: &dyn std::fmt::Display| InverseMutationError::Setup(e.to_string());
    let system = |e: &dyn std::fmt::Display| InverseMutationError::System(e.to_string());
    let bug_paths = artifact.bug_paths().map_err(|e| setup(&e))?;
    let mut watched: BTreeSet<String> = artifact.test_file_set();
    watched.extend(bug_paths.iter().cloned());
    let watched: Vec<String> = watched.into_iter().collect();

    let harness = TestHarness::new(artifact, config.limits).map_err(|e| system(&e))?;
    let mut ws = provider.clone_workspace(source).map_err(|e| system(&e))?;
    sandbox::tag_state(&mut ws, ORIGINAL_TAG).map_err(|e| system(&e))?;
    sandbox::apply_patch(&ws, &artifact.bug_inject_patch, false).map_err(|e| setup(&e))?;
    if let Some(pred) = &artifact.parent_pred_patch {
        sandbox::apply_patch(&ws, pred, false).map_err(|e| setup(&e))?;
    }
    sandbox::tag_state(&mut ws, BUGGY_TAG).map_err(|e| system(&e))?;
    let digest = ws.paths_digest(&watched).map_err(|e| system(&e))?;
    contributions(&ws, &harness, &bug_paths, failing, &watched, &digest).map_err(|h| match h {
        Halt::Fail(_, d) => InverseMutationError::Setup(d),
        Halt::System(_, d) => InverseMutationError::System(d),
    })
}
