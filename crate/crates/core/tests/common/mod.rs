#![allow(dead_code)]

use sspr_core::sandbox::{LocalPool, Workspace};
use sspr_core::{BugArtifact, BugOrder, ValidationConfig};
use sspr_testkit::{ArtifactFiles, Fixture};
use tempfile::TempDir;

pub fn source(fx: &Fixture) -> Workspace {
    Workspace::open(fx.root(), fx.spec.name).unwrap()
}

pub fn pool() -> (TempDir, LocalPool) {
    let dir = tempfile::tempdir().unwrap();
    let pool = LocalPool::new(dir.path()).unwrap();
    (dir, pool)
}

pub fn artifact(fx: &Fixture, files: &ArtifactFiles) -> BugArtifact {
    BugArtifact {
        test_script: files.test_script.clone(),
        test_files: files.test_files.clone(),
        test_parser: files.test_parser.clone(),
        bug_inject_patch: files.bug_inject.clone(),
        test_weaken_patch: files.test_weaken.clone(),
        order: BugOrder::First,
        parent_pred_patch: None,
        repo_ref: fx.spec.name.to_owned(),
    }
}

pub fn golden_config() -> ValidationConfig {
    ValidationConfig {
        min_passing_tests: sspr_testkit::GOLDEN_MIN_PASSING,
        min_changed_files: sspr_testkit::GOLDEN_MIN_CHANGED_FILES,
        min_failing_tests: sspr_testkit::GOLDEN_MIN_FAILING,
        ..ValidationConfig::default()
    }
}

pub fn golden_instance(fx: &Fixture, provider: &LocalPool) -> sspr_core::BugInstance {
    let report = sspr_core::validator::validate(
        &artifact(fx, &fx.golden().unwrap()),
        &source(fx),
        provider,
        &golden_config(),
    );
    report.instance.expect("golden artifact validates")
}
