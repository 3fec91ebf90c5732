//! Runs an artifact's test script in a workspace and parses the log.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use tempfile::TempDir;
use thiserror::Error;

use crate::artifact::{BugArtifact, RunLimits};
use crate::sandbox::{self, io_err, ExecResult, RunOptions, SandboxError, Workspace};
use crate::status::{ContractViolation, TestStatusMap};

#[derive(Debug, Error)]
pub enum RunFailure {
    #[error("test script timed out after {0:?}")]
    ScriptTimeout(Duration),
    #[error("parser exited with {exit_code}: {stderr}")]
    ParserCrash { exit_code: i32, stderr: String },
    #[error("parser timed out after {0:?}")]
    ParserTimeout(Duration),
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error(transparent)]
    Infra(#[from] SandboxError),
}

impl RunFailure {
    pub fn is_parser_fault(&self) -> bool {
        matches!(
            self,
            RunFailure::ParserCrash { .. } | RunFailure::ParserTimeout(_) | RunFailure::Contract(_)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TestRun {
    pub statuses: TestStatusMap,
    pub log: Vec<u8>,
    pub script: ExecResult,
}

/// The artifact's script and parser, written once to a private directory
/// outside any workspace so solver edits cannot reach them.
#[derive(Debug)]
pub struct TestHarness {
    _dir: TempDir,
    script: PathBuf,
    parser: PathBuf,
    parser_has_shebang: bool,
    limits: RunLimits,
}

fn write_program(path: &Path, text: &str) -> Result<(), SandboxError> {
    use std::os::unix::fs::PermissionsExt;
    let ctx = |e| io_err(&path.display().to_string(), e);
    fs::write(path, text).map_err(ctx)?;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).map_err(ctx)
}

impl TestHarness {
    pub fn new(artifact: &BugArtifact, limits: RunLimits) -> Result<Self, SandboxError> {
        Self::from_parts(&artifact.test_script, &artifact.test_parser, limits)
    }

    pub fn from_parts(script: &str, parser: &str, limits: RunLimits) -> Result<Self, SandboxError> {
        let dir = tempfile::Builder::new()
            .prefix("sspr-harness-")
            .tempdir()
            .map_err(|e| io_err("harness directory", e))?;
        let script_path = dir.path().join("test_script.sh");
        let parser_path = dir.path().join("test_parser.py");
        write_program(&script_path, script)?;
        write_program(&parser_path, parser)?;
        Ok(TestHarness {
            _dir: dir,
            script: script_path,
            parser: parser_path,
            parser_has_shebang: parser.starts_with("#!"),
            limits,
        })
    }

    pub fn limits(&self) -> &RunLimits {
        &self.limits
    }

    /// Runs the script with stderr folded into the log. The exit status is
    /// not interpreted: test outcomes come from the parser alone.
    pub fn run_script(&self, ws: &Workspace) -> Result<ExecResult, SandboxError> {
        let argv: Vec<OsString> = vec!["bash".into(), self.script.clone().into()];
        let opts = RunOptions::new(self.limits.test_timeout)
            .output_limit(self.limits.output_limit_bytes)
            .merge_stderr(true);
        sandbox::run(ws.root(), &argv, &opts)
    }

    pub fn parse(&self, ws: &Workspace, log: &[u8]) -> Result<TestStatusMap, RunFailure> {
        let argv: Vec<OsString> = if self.parser_has_shebang {
            vec![self.parser.clone().into()]
        } else {
            vec!["python3".into(), self.parser.clone().into()]
        };
        let opts = RunOptions::new(self.limits.parser_timeout)
            .output_limit(self.limits.output_limit_bytes)
            .stdin(log.to_vec());
        let r = sandbox::run(ws.root(), &argv, &opts)?;
        if r.timed_out {
            return Err(RunFailure::ParserTimeout(self.limits.parser_timeout));
        }
        if r.exit_code != 0 {
            return Err(RunFailure::ParserCrash {
                exit_code: r.exit_code,
                stderr: String::from_utf8_lossy(&r.stderr).chars().take(2000).collect(),
            });
        }
        if r.stdout_truncated {
            return Err(ContractViolation("parser output exceeded the capture limit".into()).into());
        }
        Ok(TestStatusMap::from_parser_output(&r.stdout)?)
    }

    /// Script then parser. A script timeout is reported only after the
    /// partial log has been parsed, so a broken parser is still detected.
    pub fn run(&self, ws: &Workspace) -> Result<TestRun, RunFailure> {
        let mut script = self.run_script(ws)?;
        let log = std::mem::take(&mut script.stdout);
        let statuses = self.parse(ws, &log)?;
        if script.timed_out {
            return Err(RunFailure::ScriptTimeout(self.limits.test_timeout));
        }
        Ok(TestRun {
            statuses,
            log,
            script,
        })
    }
}

/// Feeds `raw_log` to a parser program and checks its output contract.
pub fn parse_test_output(
    parser: &str,
    raw_log: &[u8],
    ws: &Workspace,
    timeout: Duration,
) -> Result<TestStatusMap, RunFailure> {
    let limits = RunLimits {
        parser_timeout: timeout,
        ..RunLimits::default()
    };
    TestHarness::from_parts("", parser, limits)?.parse(ws, raw_log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::git::init_snapshot;
    use crate::status::TestStatus;

    const PY_PARSER: &str = r#"#!/usr/bin/env python3
import json, sys
out = {}
for line in sys.stdin:
    parts = line.split()
    if len(parts) == 2 and parts[0] in ("PASS", "FAIL"):
        out[parts[1]] = "passed" if parts[0] == "PASS" else "failed"
print(json.dumps(out))
"#;

    fn ws() -> (TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("README"), "x\n").unwrap();
        init_snapshot(dir.path()).unwrap();
        let ws = Workspace::open(dir.path(), "t").unwrap();
        (dir, ws)
    }

    #[test]
    fn reference_parser_maps_the_fixture_log() {
        let (_d, ws) = ws();
        let log = b"PASS test_a\nFAIL test_b\nnoise\n";
        let m = parse_test_output(PY_PARSER, log, &ws, Duration::from_secs(30)).unwrap();
        assert_eq!(m.get("test_a"), Some(TestStatus::Passed));
        assert_eq!(m.get("test_b"), Some(TestStatus::Failed));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn parser_without_shebang_runs_under_python() {
        let (_d, ws) = ws();
        let body = PY_PARSER.split_once('\n').unwrap().1;
        let m = parse_test_output(body, b"PASS t\n", &ws, Duration::from_secs(30)).unwrap();
        assert!(m.is_passed("t"));
    }

    #[test]
    fn contract_violations_are_typed() {
        let (_d, ws) = ws();
        let t = Duration::from_secs(10);
        let array = "#!/bin/sh\necho '[]'\n";
        assert!(matches!(parse_test_output(array, b"", &ws, t), Err(RunFailure::Contract(_))));
        let error = "#!/bin/sh\necho '{\"t\": \"error\"}'\n";
        assert!(matches!(parse_test_output(error, b"", &ws, t), Err(RunFailure::Contract(_))));
        let crash = "#!/bin/sh\nexit 2\n";
        assert!(matches!(
            parse_test_output(crash, b"", &ws, t),
            Err(RunFailure::ParserCrash { exit_code: 2, .. })
        ));
        let slow = "#!/bin/sh\nsleep 20\n";
        assert!(matches!(
            parse_test_output(slow, b"", &ws, Duration::from_millis(200)),
            Err(RunFailure::ParserTimeout(_))
        ));
    }

    #[test]
    fn script_runs_in_workspace_with_stderr_in_log() {
        let (_d, ws) = ws();
        let script = "cat README >&2\necho PASS t\nexit 1\n";
        let h = TestHarness::from_parts(script, PY_PARSER, RunLimits::default()).unwrap();
        let run = h.run(&ws).unwrap();
        assert_eq!(run.log, b"x\nPASS t\n");
        assert!(run.statuses.is_passed("t"));
        assert_eq!(run.script.exit_code, 1);
    }

    #[test]
    fn script_timeout_is_reported_after_parsing() {
        let (_d, ws) = ws();
        let limits = RunLimits {
            test_timeout: Duration::from_millis(300),
            ..RunLimits::default()
        };
        let h = TestHarness::from_parts("echo PASS t\nsleep 30\n", PY_PARSER, limits).unwrap();
        assert!(matches!(h.run(&ws), Err(RunFailure::ScriptTimeout(_))));
        let broken = TestHarness::from_parts("sleep 30\n", "#!/bin/sh\necho nope\n", limits).unwrap();
        assert!(matches!(broken.run(&ws), Err(RunFailure::Contract(_))));
    }
}
