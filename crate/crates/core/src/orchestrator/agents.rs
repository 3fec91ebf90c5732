//! Agent roles and the subprocess adapter protocol.
//!
//! A command agent is started with its working directory at the workspace
//! root and these variables set:
//!
//! | variable            | meaning                                            |
//! |---------------------|----------------------------------------------------|
//! | `SSPR_ROLE`         | `proposer` or `solver`                             |
//! | `SSPR_WORKSPACE`    | workspace root (also the cwd)                      |
//! | `SSPR_OUTPUT_DIR`   | empty directory for submissions                    |
//! | `SSPR_PROMPT`       | file holding the rendered prompt                   |
//! | `SSPR_SPEC_PATCH`   | solver only: file holding the test specification   |
//! | `SSPR_SEED`         | per-invocation seed                                |
//! | `SSPR_EPISODE`      | episode index                                      |
//! | `SSPR_ATTEMPT`      | solver only: attempt index within the episode      |
//!
//! Proposers write an artifact directory into `SSPR_OUTPUT_DIR`. Solvers
//! either write `pred_patch.diff` there or edit the workspace in place.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactError, BugArtifact, PRED_PATCH};
use crate::sandbox::{self, SandboxError, Workspace};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent timed out after {0:?}")]
    Timeout(Duration),
    #[error("agent exited with status {code}: {stderr}")]
    Crash { code: i32, stderr: String },
    #[error("agent broke the submission protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

impl From<ArtifactError> for AgentError {
    fn from(e: ArtifactError) -> Self {
        AgentError::Protocol(e.to_string())
    }
}

pub struct ProposerContext<'a> {
    /// Fresh clone of the pristine source; the proposer may edit it freely.
    pub workspace: &'a mut Workspace,
    pub output_dir: &'a Path,
    pub prompt: &'a str,
    pub episode: u64,
    pub seed: u64,
}

/// Everything a solver may see. The bug and weakening patches are
/// deliberately absent.
pub struct SolverContext<'a> {
    /// Private clone of the built task workspace: one commit, no tags.
    pub workspace: &'a mut Workspace,
    pub output_dir: &'a Path,
    pub spec_patch: &'a str,
    pub prompt: &'a str,
    pub episode: u64,
    pub attempt: u32,
    pub seed: u64,
}

impl SolverContext<'_> {
    /// The submitted patch: `pred_patch.diff` if written, otherwise every
    /// change made to the workspace since its single commit.
    pub fn collect_prediction(&self) -> Result<String, AgentError> {
        let file = self.output_dir.join(PRED_PATCH);
        match fs::read_to_string(&file) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Ok(sandbox::git::diff_worktree(self.workspace, "HEAD")?)
            }
            Err(e) => Err(AgentError::Protocol(format!("{}: {e}", file.display()))),
        }
    }
}

pub trait Proposer: Send + Sync {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError>;
}

pub trait Solver: Send + Sync {
    /// Returns the predicted patch against the task workspace.
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError>;
}

impl<T: Proposer + ?Sized> Proposer for Box<T> {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError> {
        (**self).propose(ctx)
    }
}

impl<T: Solver + ?Sized> Solver for Box<T> {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        (**self).solve(ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proposer,
    Solver,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Proposer => "proposer",
            Role::Solver => "solver",
        }
    }
}

/// External agent started as a subprocess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandAgent {
    pub argv: Vec<String>,
    #[serde(with = "crate::artifact::duration_secs", default = "default_agent_timeout")]
    pub timeout: Duration,
}

fn default_agent_timeout() -> Duration {
    Duration::from_secs(3600)
}

impl CommandAgent {
    pub fn new(argv: Vec<String>, timeout: Duration) -> Self {
        CommandAgent { argv, timeout }
    }

    fn invoke(&self, role: Role, ws: &Workspace, out: &Path, prompt: &str, extra: &[(&str, String)]) -> Result<(), AgentError> {
        if self.argv.is_empty() {
            return Err(AgentError::Protocol("empty agent command".into()));
        }
        let prompt_file = write_beside(out, "prompt.md", prompt)?;
        let mut opts = sandbox::RunOptions::new(self.timeout)
            .output_limit(1 << 20)
            .env("SSPR_ROLE", role.as_str())
            .env("SSPR_WORKSPACE", ws.root())
            .env("SSPR_OUTPUT_DIR", out)
            .env("SSPR_PROMPT", prompt_file);
        for (k, v) in extra {
            opts = opts.env(*k, v);
        }
        let argv: Vec<OsString> = self.argv.iter().map(OsString::from).collect();
        let res = sandbox::run(ws.root(), &argv, &opts)?;
        if res.timed_out {
            return Err(AgentError::Timeout(self.timeout));
        }
        if res.exit_code != 0 {
            let stderr = String::from_utf8_lossy(&res.stderr);
            let lines: Vec<&str> = stderr.lines().collect();
            return Err(AgentError::Crash {
                code: res.exit_code,
                stderr: lines[lines.len().saturating_sub(5)..].join("\n"),
            });
        }
        Ok(())
    }
}

/// Agent inputs live next to, not inside, the submission directory.
fn write_beside(out: &Path, name: &str, text: &str) -> Result<PathBuf, AgentError> {
    let dir = out.parent().unwrap_or(out).join("inputs");
    let path = dir.join(name);
    fs::create_dir_all(&dir)
        .and_then(|_| fs::write(&path, text))
        .map_err(|e| AgentError::Sandbox(sandbox::io_err("writing agent input", e)))?;
    Ok(path)
}

impl Proposer for CommandAgent {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError> {
        self.invoke(
            Role::Proposer,
            ctx.workspace,
            ctx.output_dir,
            ctx.prompt,
            &[("SSPR_SEED", ctx.seed.to_string()), ("SSPR_EPISODE", ctx.episode.to_string())],
        )?;
        let mut artifact = BugArtifact::load_unchecked(ctx.output_dir)?;
        if artifact.repo_ref.is_empty() {
            artifact.repo_ref = ctx.workspace.repo_ref.clone();
        }
        Ok(artifact)
    }
}

impl Solver for CommandAgent {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        let spec = write_beside(ctx.output_dir, "spec.diff", ctx.spec_patch)?;
        self.invoke(
            Role::Solver,
            ctx.workspace,
            ctx.output_dir,
            ctx.prompt,
            &[
                ("SSPR_SPEC_PATCH", spec.display().to_string()),
                ("SSPR_SEED", ctx.seed.to_string()),
                ("SSPR_EPISODE", ctx.episode.to_string()),
                ("SSPR_ATTEMPT", ctx.attempt.to_string()),
            ],
        )?;
        ctx.collect_prediction()
    }
}
