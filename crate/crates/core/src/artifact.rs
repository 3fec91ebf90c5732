//! Bug artifacts, validation thresholds, and validated bug instances.
//!
//! An artifact directory holds the five files an injector submits plus
//! `meta.json` (and `pred_patch.diff` for higher-order bugs):
//!
//! ```text
//! test_script.sh  test_files.txt  test_parser.py  bug_inject.diff  test_weaken.diff
//! ```
//!
//! The prompt-facing aliases `bug_patch.diff`, `test_patch.diff` and
//! `parse_test_output.py` are accepted when loading; saving always writes the
//! canonical names.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diff::{self, DiffError};
use crate::status::{TestStatus, TestStatusMap};

pub const TEST_SCRIPT: &str = "test_script.sh";
pub const TEST_FILES: &str = "test_files.txt";
pub const TEST_PARSER: &str = "test_parser.py";
pub const BUG_INJECT: &str = "bug_inject.diff";
pub const TEST_WEAKEN: &str = "test_weaken.diff";
pub const PRED_PATCH: &str = "pred_patch.diff";
pub const META: &str = "meta.json";

const ALIASES: &[(&str, &str)] = &[
    (TEST_PARSER, "parse_test_output.py"),
    (BUG_INJECT, "bug_patch.diff"),
    (TEST_WEAKEN, "test_patch.diff"),
];

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing artifact file {0}")]
    MissingFile(String),
    #[error("{file}: {source}")]
    MalformedDiff {
        file: String,
        #[source]
        source: DiffError,
    },
    #[error("path {0:?} is not a plain repo-relative path")]
    PathEscape(String),
    #[error("scope violation: {0}")]
    MixedScope(String),
    #[error("invalid test_files.txt: {0}")]
    InvalidTestFiles(String),
    #[error("order {order} is inconsistent with the presence of {PRED_PATCH}")]
    OrderMismatch { order: u8 },
    #[error("invalid {META}: {0}")]
    InvalidMeta(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ArtifactError {
    fn io(path: &Path, source: io::Error) -> Self {
        ArtifactError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Whether a bug was injected directly or layered on a failed repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BugOrder {
    First,
    Second,
}

impl TryFrom<u8> for BugOrder {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(BugOrder::First),
            2 => Ok(BugOrder::Second),
            other => Err(format!("bug order must be 1 or 2, got {other}")),
        }
    }
}

impl From<BugOrder> for u8 {
    fn from(o: BugOrder) -> u8 {
        match o {
            BugOrder::First => 1,
            BugOrder::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugArtifact {
    pub test_script: String,
    pub test_files: Vec<String>,
    pub test_parser: String,
    pub bug_inject_patch: String,
    pub test_weaken_patch: String,
    pub order: BugOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_pred_patch: Option<String>,
    pub repo_ref: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    order: BugOrder,
    #[serde(default)]
    repo_ref: String,
}

/// Checks that `path` names something inside a repository root.
pub fn check_repo_relative(path: &str) -> Result<(), ArtifactError> {
    let p = Path::new(path);
    let plain = !path.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)))
        && p.components().next() != Some(Component::Normal(".git".as_ref()));
    if plain {
        Ok(())
    } else {
        Err(ArtifactError::PathEscape(path.to_owned()))
    }
}

impl BugArtifact {
    /// Oracle test specification shown to solvers: the reversed weakening.
    pub fn spec_patch(&self) -> Result<String, DiffError> {
        diff::reverse_diff(&self.test_weaken_patch)
    }

    /// Reference fix: undo the failed prediction (order 2), then the bug.
    pub fn oracle_fix(&self) -> Result<String, DiffError> {
        let unbug = diff::reverse_diff(&self.bug_inject_patch)?;
        match &self.parent_pred_patch {
            Some(pred) => Ok(diff::compose(&[&diff::reverse_diff(pred)?, &unbug])),
            None => Ok(unbug),
        }
    }

    /// Content-derived identifier, stable across save/load.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |name: &str, bytes: &[u8]| {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field("script", self.test_script.as_bytes());
        field("files", self.test_files.join("\n").as_bytes());
        field("parser", self.test_parser.as_bytes());
        field("bug", self.bug_inject_patch.as_bytes());
        field("weaken", self.test_weaken_patch.as_bytes());
        field("order", &[u8::from(self.order)]);
        field(
            "pred",
            self.parent_pred_patch.as_deref().unwrap_or("").as_bytes(),
        );
        field("repo", self.repo_ref.as_bytes());
        let digest = h.finalize();
        format!("bug-{}", &hex::encode(digest)[..16])
    }

    pub fn test_file_set(&self) -> BTreeSet<String> {
        self.test_files.iter().cloned().collect()
    }

    /// Invariants that need no diff parsing: test-file list and order.
    pub fn check_structure(&self) -> Result<(), ArtifactError> {
        if self.test_files.is_empty() {
            return Err(ArtifactError::InvalidTestFiles("no test files listed".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.test_files {
            check_repo_relative(f)?;
            if !seen.insert(f.as_str()) {
                return Err(ArtifactError::InvalidTestFiles(format!("duplicate entry {f:?}")));
            }
        }
        match (self.order, &self.parent_pred_patch) {
            (BugOrder::First, None) | (BugOrder::Second, Some(_)) => Ok(()),
            (order, _) => Err(ArtifactError::OrderMismatch { order: order.into() }),
        }
    }

    pub fn bug_paths(&self) -> Result<BTreeSet<String>, ArtifactError> {
        diff::patch_paths(&self.bug_inject_patch).map_err(|source| ArtifactError::MalformedDiff {
            file: BUG_INJECT.into(),
            source,
        })
    }

    pub fn weaken_paths(&self) -> Result<BTreeSet<String>, ArtifactError> {
        diff::patch_paths(&self.test_weaken_patch).map_err(|source| {
            ArtifactError::MalformedDiff {
                file: TEST_WEAKEN.into(),
                source,
            }
        })
    }

    /// The bug patch stays out of test files; the weakening patch stays inside them.
    pub fn check_scope(&self) -> Result<(), ArtifactError> {
        let tests = self.test_file_set();
        let bug = self.bug_paths()?;
        let weaken = self.weaken_paths()?;
        for p in bug.iter().chain(&weaken) {
            check_repo_relative(p)?;
        }
        if let Some(p) = bug.iter().find(|p| tests.contains(*p)) {
            return Err(ArtifactError::MixedScope(format!(
                "{BUG_INJECT} touches test file {p}"
            )));
        }
        if let Some(p) = weaken.iter().find(|p| !tests.contains(*p)) {
            return Err(ArtifactError::MixedScope(format!(
                "{TEST_WEAKEN} touches {p}, which is not listed in {TEST_FILES}"
            )));
        }
        if let Some(pred) = &self.parent_pred_patch {
            let pred_paths = diff::patch_paths(pred).map_err(|source| {
                ArtifactError::MalformedDiff {
                    file: PRED_PATCH.into(),
                    source,
                }
            })?;
            if let Some(p) = pred_paths.iter().find(|p| tests.contains(*p)) {
                return Err(ArtifactError::MixedScope(format!(
                    "{PRED_PATCH} touches test file {p}"
                )));
            }
        }
        Ok(())
    }

    /// Reads an artifact directory and enforces every structural invariant.
    pub fn load(dir: &Path) -> Result<Self, ArtifactError> {
        let artifact = Self::load_unchecked(dir)?;
        artifact.check_structure()?;
        artifact.check_scope()?;
        Ok(artifact)
    }

    /// Reads an artifact directory, requiring only that the files exist.
    ///
    /// Scope and diff problems are left for the validator to report as
    /// check failures.
    pub fn load_unchecked(dir: &Path) -> Result<Self, ArtifactError> {
        let read = |canonical: &str| -> Result<String, ArtifactError> {
            let mut candidates = vec![canonical];
            candidates.extend(ALIASES.iter().filter(|(c, _)| *c == canonical).map(|(_, a)| *a));
            for name in candidates {
                let path = dir.join(name);
                match fs::read_to_string(&path) {
                    Ok(s) => return Ok(s),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                    Err(e) => return Err(ArtifactError::io(&path, e)),
                }
            }
            Err(ArtifactError::MissingFile(canonical.to_owned()))
        };

        let test_script = read(TEST_SCRIPT)?;
        let test_files = read(TEST_FILES)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let test_parser = read(TEST_PARSER)?;
        let bug_inject_patch = read(BUG_INJECT)?;
        let test_weaken_patch = read(TEST_WEAKEN)?;
        let parent_pred_patch = match read(PRED_PATCH) {
            Ok(s) => Some(s),
            Err(ArtifactError::MissingFile(_)) => None,
            Err(e) => return Err(e),
        };

        let meta_path = dir.join(META);
        let meta = match fs::read(&meta_path) {
            Ok(bytes) => Some(
                serde_json::from_slice::<Meta>(&bytes)
                    .map_err(|e| ArtifactError::InvalidMeta(e.to_string()))?,
            ),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(ArtifactError::io(&meta_path, e)),
        };
        let (order, repo_ref) = match meta {
            Some(m) => (m.order, m.repo_ref),
            None if parent_pred_patch.is_some() => (BugOrder::Second, String::new()),
            None => (BugOrder::First, String::new()),
        };

        Ok(BugArtifact {
            test_script,
            test_files,
            test_parser,
            bug_inject_patch,
            test_weaken_patch,
            order,
            parent_pred_patch,
            repo_ref,
        })
    }

    /// Writes the canonical layout. Invariants are checked before anything
    /// touches the filesystem.
    pub fn save(&self, dir: &Path) -> Result<(), ArtifactError> {
        self.check_structure()?;
        fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
        let write = |name: &str, contents: &str| -> Result<(), ArtifactError> {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| ArtifactError::io(&path, e))
        };
        let mut files = String::new();
        for f in &self.test_files {
            files.push_str(f);
            files.push('\n');
        }
        write(TEST_SCRIPT, &self.test_script)?;
        write(TEST_FILES, &files)?;
        write(TEST_PARSER, &self.test_parser)?;
        write(BUG_INJECT, &self.bug_inject_patch)?;
        write(TEST_WEAKEN, &self.test_weaken_patch)?;
        match &self.parent_pred_patch {
            Some(p) => write(PRED_PATCH, p)?,
            None => match fs::remove_file(dir.join(PRED_PATCH)) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(ArtifactError::io(&dir.join(PRED_PATCH), e)),
            },
        }
        let meta = Meta {
            order: self.order,
            repo_ref: self.repo_ref.clone(),
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        json.push('\n');
        write(META, &json)?;
        for exe in [TEST_SCRIPT, TEST_PARSER] {
            set_executable(&dir.join(exe))?;
        }
        Ok(())
    }
}

#[cfg(unix)]
fn set_executable(path: &Path) -> Result<(), ArtifactError> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755))
        .map_err(|e| ArtifactError::io(path, e))
}

#[cfg(not(unix))]
fn set_executable(_: &Path) -> Result<(), ArtifactError> {
    Ok(())
}

pub mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Time and output limits for test-script and parser runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunLimits {
    #[serde(rename = "test_timeout_secs", with = "duration_secs")]
    pub test_timeout: Duration,
    #[serde(rename = "parser_timeout_secs", with = "duration_secs")]
    pub parser_timeout: Duration,
    pub output_limit_bytes: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            test_timeout: Duration::from_secs(90),
            parser_timeout: Duration::from_secs(30),
            output_limit_bytes: 64 << 20,
        }
    }
}

/// Control parameters checked during consistency validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub min_passing_tests: usize,
    pub min_changed_files: usize,
    pub min_failing_tests: usize,
    #[serde(flatten)]
    pub limits: RunLimits,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            min_passing_tests: 1,
            min_changed_files: 1,
            min_failing_tests: 1,
            limits: RunLimits::default(),
        }
    }
}

/// A validated, SWE-bench style task derived from an artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugInstance {
    pub artifact: BugArtifact,
    /// Commit of the source snapshot the instance was validated against.
    pub base_ref: String,
    pub fail_to_pass: BTreeSet<String>,
    pub pass_to_pass: BTreeSet<String>,
    pub baseline_statuses: TestStatusMap,
    pub buggy_statuses: TestStatusMap,
}

impl BugInstance {
    pub fn id(&self) -> String {
        self.artifact.id()
    }

    pub fn check_invariants(&self) -> Result<(), ArtifactError> {
        let bad = |m: String| Err(ArtifactError::InvalidInstance(m));
        if self.fail_to_pass.is_empty() {
            return bad("FAIL_TO_PASS is empty".into());
        }
        if let Some(t) = self.fail_to_pass.intersection(&self.pass_to_pass).next() {
            return bad(format!("{t} is in both FAIL_TO_PASS and PASS_TO_PASS"));
        }
        for t in &self.fail_to_pass {
            // A test missing from the buggy run counts as failed.
            if self.baseline_statuses.get(t) != Some(TestStatus::Passed)
                || self.buggy_statuses.get(t) == Some(TestStatus::Passed)
            {
                return bad(format!("{t} is not passed at baseline and failed when buggy"));
            }
        }
        Ok(())
    }

    pub fn spec_patch(&self) -> Result<String, DiffError> {
        self.artifact.spec_patch()
    }

    pub fn oracle_fix(&self) -> Result<String, DiffError> {
        self.artifact.oracle_fix()
    }

    pub fn to_json(&self) -> Result<String, ArtifactError> {
        let wire = self.to_wire().map_err(|source| ArtifactError::MalformedDiff {
            file: BUG_INJECT.into(),
            source,
        })?;
        let mut s = serde_json::to_string_pretty(&wire).expect("instance serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let wire: InstanceWire =
            serde_json::from_str(text).map_err(|e| ArtifactError::InvalidInstance(e.to_string()))?;
        Self::from_wire(wire)
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        let text = fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        let json = self.to_json()?;
        fs::write(path, json).map_err(|e| ArtifactError::io(path, e))
    }

    fn to_wire(&self) -> Result<InstanceWire, DiffError> {
        let a = &self.artifact;
        Ok(InstanceWire {
            instance_id: self.id(),
            repo: a.repo_ref.clone(),
            base_ref: self.base_ref.clone(),
            patch: self.oracle_fix()?,
            test_patch: self.spec_patch()?,
            fail_to_pass: self.fail_to_pass.iter().cloned().collect(),
            pass_to_pass: self.pass_to_pass.iter().cloned().collect(),
            order: a.order,
            bug_inject_patch: a.bug_inject_patch.clone(),
            test_weaken_patch: a.test_weaken_patch.clone(),
            parent_pred_patch: a.parent_pred_patch.clone(),
            test_script: a.test_script.clone(),
            test_parser: a.test_parser.clone(),
            test_files: a.test_files.clone(),
            baseline_statuses: self.baseline_statuses.clone(),
            buggy_statuses: self.buggy_statuses.clone(),
        })
    }

    fn from_wire(w: InstanceWire) -> Result<Self, ArtifactError> {
        let instance = BugInstance {
            artifact: BugArtifact {
                test_script: w.test_script,
                test_files: w.test_files,
                test_parser: w.test_parser,
                bug_inject_patch: w.bug_inject_patch,
                test_weaken_patch: w.test_weaken_patch,
                order: w.order,
                parent_pred_patch: w.parent_pred_patch,
                repo_ref: w.repo,
            },
            base_ref: w.base_ref,
            fail_to_pass: w.fail_to_pass.into_iter().collect(),
            pass_to_pass: w.pass_to_pass.into_iter().collect(),
            baseline_statuses: w.baseline_statuses,
            buggy_statuses: w.buggy_statuses,
        };
        instance.artifact.check_structure()?;
        instance.check_invariants()?;
        Ok(instance)
    }
}

impl Serialize for BugInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire()
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BugInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = InstanceWire::deserialize(d)?;
        BugInstance::from_wire(wire).map_err(serde::de::Error::custom)
    }
}

/// On-disk instance layout; `patch` and `test_patch` are derived on write.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceWire {
    instance_id: String,
    repo: String,
    base_ref: String,
    patch: String,
    test_patch: String,
    #[serde(rename = "FAIL_TO_PASS")]
    fail_to_pass: Vec<String>,
    #[serde(rename = "PASS_TO_PASS")]
    pass_to_pass: Vec<String>,
    order: BugOrder,
    bug_inject_patch: String,
    test_weaken_patch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_pred_patch: Option<String>,
    test_script: String,
    test_parser: String,
    test_files: Vec<String>,
    baseline_statuses: TestStatusMap,
    buggy_statuses: TestStatusMap,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUG: &str = "diff --git a/src/a.sh b/src/a.sh
--- a/src/a.sh
+++ b/src/a.sh
@@ -1 +1 @@
-echo 1
+echo 2
";
    const WEAKEN: &str = "diff --git a/tests/t.sh b/tests/t.sh
--- a/tests/t.sh
+++ b/tests/t.sh
@@ -1,2 +1 @@
 check a
-check b
";

    fn sample() -> BugArtifact {
        BugArtifact {
            test_script: "#!/bin/bash\nsh tests/t.sh\n".into(),
            test_files: vec!["tests/t.sh".into()],
            test_parser: "#!/bin/sh\ncat\n".into(),
            bug_inject_patch: BUG.into(),
            test_weaken_patch: WEAKEN.into(),
            order: BugOrder::First,
            parent_pred_patch: None,
            repo_ref: "calc@abc".into(),
        }
    }

    fn statuses(pairs: &[(&str, TestStatus)]) -> TestStatusMap {
        pairs.iter().map(|(k, s)| (k.to_string(), *s)).collect()
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample();
        a.save(dir.path()).unwrap();
        let b = BugArtifact::load(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read_to_string(dir.path().join(BUG_INJECT)).unwrap(), BUG);
        assert_eq!(
            fs::read_to_string(dir.path().join(TEST_FILES)).unwrap(),
            "tests/t.sh\n"
        );
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn missing_parser_is_named() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join(TEST_PARSER)).unwrap();
        match BugArtifact::load(dir.path()) {
            Err(ArtifactError::MissingFile(name)) => assert_eq!(name, "test_parser.py"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prompt_aliases_load_and_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample();
        fs::write(dir.path().join("test_script.sh"), &a.test_script).unwrap();
        fs::write(dir.path().join("test_files.txt"), "tests/t.sh\n").unwrap();
        fs::write(dir.path().join("parse_test_output.py"), &a.test_parser).unwrap();
        fs::write(dir.path().join("bug_patch.diff"), BUG).unwrap();
        fs::write(dir.path().join("test_patch.diff"), WEAKEN).unwrap();
        let loaded = BugArtifact::load(dir.path()).unwrap();
        assert_eq!(loaded.order, BugOrder::First);
        assert_eq!(loaded.bug_inject_patch, BUG);

        let out = tempfile::tempdir().unwrap();
        loaded.save(out.path()).unwrap();
        assert!(out.path().join(BUG_INJECT).exists());
        assert!(!out.path().join("bug_patch.diff").exists());
    }

    #[test]
    fn bug_patch_touching_a_test_file_is_mixed_scope() {
        let mut a = sample();
        a.bug_inject_patch = WEAKEN.into();
        assert!(matches!(a.check_scope(), Err(ArtifactError::MixedScope(_))));
    }

    #[test]
    fn weaken_outside_test_files_is_mixed_scope() {
        let mut a = sample();
        a.test_weaken_patch = BUG.into();
        assert!(matches!(a.check_scope(), Err(ArtifactError::MixedScope(_))));
    }

    #[test]
    fn escaping_paths_are_rejected() {
        for bad in ["/etc/passwd", "../x", "a/../../b", "", ".git/config", "./a"] {
            assert!(check_repo_relative(bad).is_err(), "{bad}");
        }
        assert!(check_repo_relative("tests/test_a.sh").is_ok());
        let mut a = sample();
        a.test_files = vec!["../outside.sh".into()];
        assert!(matches!(a.check_structure(), Err(ArtifactError::PathEscape(_))));
    }

    #[test]
    fn empty_or_duplicate_test_files_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        let mut a = sample();
        a.test_files.clear();
        assert!(a.save(&target).is_err());
        assert!(!target.exists());
        a.test_files = vec!["tests/t.sh".into(), "tests/t.sh".into()];
        assert!(a.check_structure().is_err());
    }

    #[test]
    fn order_two_requires_pred_patch() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = sample();
        a.order = BugOrder::Second;
        assert!(matches!(
            a.save(dir.path()),
            Err(ArtifactError::OrderMismatch { order: 2 })
        ));
        a.parent_pred_patch = Some(String::new());
        a.save(dir.path()).unwrap();
        let back = BugArtifact::load(dir.path()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn instance_json_uses_swe_bench_field_names() {
        let inst = BugInstance {
            artifact: sample(),
            base_ref: "deadbeef".into(),
            fail_to_pass: ["b".to_string()].into(),
            pass_to_pass: ["a".to_string()].into(),
            baseline_statuses: statuses(&[("a", TestStatus::Passed), ("b", TestStatus::Passed)]),
            buggy_statuses: statuses(&[("a", TestStatus::Passed), ("b", TestStatus::Failed)]),
        };
        let json = inst.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["repo", "base_ref", "patch", "test_patch", "FAIL_TO_PASS", "PASS_TO_PASS"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["FAIL_TO_PASS"], serde_json::json!(["b"]));
        assert_eq!(v["patch"].as_str().unwrap(), diff::reverse_diff(BUG).unwrap());
        assert_eq!(BugInstance::from_json(&json).unwrap(), inst);
    }

    #[test]
    fn instance_invariants_are_enforced_on_read() {
        let inst = BugInstance {
            artifact: sample(),
            base_ref: String::new(),
            fail_to_pass: ["a".to_string()].into(),
            pass_to_pass: ["a".to_string()].into(),
            baseline_statuses: statuses(&[("a", TestStatus::Passed)]),
            buggy_statuses: statuses(&[("a", TestStatus::Failed)]),
        };
        let json = inst.to_json().unwrap();
        assert!(BugInstance::from_json(&json).is_err());
    }

    #[test]
    fn config_defaults_and_serde_names() {
        let c = ValidationConfig::default();
        assert!(c.min_passing_tests >= 1 && c.min_changed_files >= 1 && c.min_failing_tests >= 1);
        assert_eq!(c.limits.test_timeout, Duration::from_secs(90));
        let v = serde_json::to_value(c).unwrap();
        assert_eq!(v["test_timeout_secs"], 90.0);
        let parsed: ValidationConfig =
            serde_json::from_str(r#"{"min_changed_files": 2, "test_timeout_secs": 5}"#).unwrap();
        assert_eq!(parsed.min_changed_files, 2);
        assert_eq!(parsed.limits.test_timeout, Duration::from_secs(5));
        assert_eq!(parsed.limits.parser_timeout, Duration::from_secs(30));
    }
}
