//! Deterministic agents for tests and demonstrations.
//!
//! Solvers that "know" the answer look it up in an [`AnswerKey`] filled by a
//! [`Recorded`] proposer, so nothing secret flows through the solver context.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::agents::{AgentError, Proposer, ProposerContext, Solver, SolverContext};
use crate::artifact::BugArtifact;
use crate::diff;
use crate::sandbox::{self, git, Workspace};

/// Shared record of every artifact a wrapped proposer produced.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey(Arc<Mutex<Vec<BugArtifact>>>);

impl AnswerKey {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, artifact: BugArtifact) {
        let mut all = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if !all.iter().any(|a| a == &artifact) {
            all.push(artifact);
        }
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reference fix for the task in `ctx`: the first recorded artifact with
    /// the same test specification whose fix applies to the workspace.
    pub fn oracle_fix(&self, ctx: &SolverContext<'_>) -> Result<String, AgentError> {
        let candidates: Vec<String> = {
            let all = self.0.lock().unwrap_or_else(|p| p.into_inner());
            all.iter()
                .filter(|a| a.spec_patch().is_ok_and(|s| s == ctx.spec_patch))
                .filter_map(|a| a.oracle_fix().ok())
                .collect()
        };
        for fix in candidates {
            if sandbox::apply_patch(ctx.workspace, &fix, false).is_ok() {
                sandbox::apply_patch(ctx.workspace, &fix, true)?;
                return Ok(fix);
            }
        }
        Err(AgentError::Protocol("no recorded artifact matches this task".into()))
    }
}

/// Wraps a proposer and records its artifacts into a key.
pub struct Recorded<P> {
    pub inner: P,
    pub key: AnswerKey,
}

impl<P: Proposer> Proposer for Recorded<P> {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError> {
        let a = self.inner.propose(ctx)?;
        self.key.insert(a.clone());
        Ok(a)
    }
}

/// Emits recorded artifacts, cycling by episode index.
pub struct ReplayProposer {
    pub artifacts: Vec<BugArtifact>,
}

impl Proposer for ReplayProposer {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError> {
        if self.artifacts.is_empty() {
            return Err(AgentError::Protocol("nothing to replay".into()));
        }
        let a = self.artifacts[(ctx.episode % self.artifacts.len() as u64) as usize].clone();
        a.save(ctx.output_dir)?;
        Ok(a)
    }
}

pub struct OracleSolver {
    pub key: AnswerKey,
}

impl Solver for OracleSolver {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        self.key.oracle_fix(ctx)
    }
}

pub struct NoopSolver;

impl Solver for NoopSolver {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        ctx.collect_prediction()
    }
}

/// Submits a fixed patch every time.
pub struct ReplaySolver {
    pub prediction: String,
}

impl Solver for ReplaySolver {
    fn solve(&self, _ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        Ok(self.prediction.clone())
    }
}

/// Rewrites every test file named by the specification so it can only pass.
pub struct TamperSolver;

impl Solver for TamperSolver {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        let paths = diff::patch_paths(ctx.spec_patch).map_err(|e| AgentError::Protocol(e.to_string()))?;
        for p in paths {
            let path = ctx.workspace.root().join(&p);
            fs::write(&path, "exit 0\n").map_err(|e| AgentError::Sandbox(sandbox::io_err(&p, e)))?;
        }
        ctx.collect_prediction()
    }
}

/// Oracle fix with probability `p`, otherwise nothing; one seeded coin per
/// attempt.
pub struct CoinflipSolver {
    pub p: f64,
    pub key: AnswerKey,
}

impl CoinflipSolver {
    pub fn flip(p: f64, seed: u64) -> bool {
        ChaCha20Rng::seed_from_u64(seed).random_bool(p)
    }
}

impl Solver for CoinflipSolver {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        if Self::flip(self.p, ctx.seed) {
            self.key.oracle_fix(ctx)
        } else {
            Ok(String::new())
        }
    }
}

/// Oracle on even attempts, nothing on odd ones.
pub struct AlternatingSolver {
    pub key: AnswerKey,
}

impl Solver for AlternatingSolver {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        if ctx.attempt.is_multiple_of(2) {
            self.key.oracle_fix(ctx)
        } else {
            Ok(String::new())
        }
    }
}

pub const JITTER_FILE: &str = ".notes";

/// Adds a seeded scratch file to whatever the inner solver submits, so no
/// two attempts produce the same tree.
pub struct Jitter<S> {
    pub inner: S,
}

impl<S: Solver> Solver for Jitter<S> {
    fn solve(&self, ctx: &mut SolverContext<'_>) -> Result<String, AgentError> {
        let inner = self.inner.solve(ctx)?;
        let note = format!(
            "diff --git a/{f} b/{f}\nnew file mode 100644\n--- /dev/null\n+++ b/{f}\n@@ -0,0 +1 @@\n+{:016x}\n",
            ChaCha20Rng::seed_from_u64(ctx.seed).next_u64(),
            f = JITTER_FILE
        );
        Ok(diff::compose(&[&inner, &note]))
    }
}

const NONCE_MARK: &str = "# sspr-nonce";
const NONCE_LIMIT: usize = 1 << 20;
const GATE_BITS: u32 = 52;

/// Degenerate challenger: the test script ignores the code's behaviour and
/// passes or fails every test according to a salted hash of the tree.
///
/// The pristine tree (matched by hash) runs the real tests. Any other tree
/// passes everything when its hash falls below `target * 2^52`, and fails
/// everything otherwise. Bug and weakening patches only append nonce
/// comments; nonces are searched so that all seven checks pass.
///
/// The base script must print `PASS <id>` / `FAIL <id>` lines and source
/// files must accept `#` comments.
pub struct FailRandomly {
    pub base: BugArtifact,
    pub bug_files: Vec<String>,
    pub weaken_file: String,
    pub target: f64,
}

impl FailRandomly {
    pub fn threshold(target: f64) -> String {
        let scale = (1u64 << GATE_BITS) as f64;
        let t = (target.clamp(0.0, 1.0) * scale).floor() as u64;
        format!("{:013x}", t.min((1u64 << GATE_BITS) - 1))
    }

    pub fn script(base: &str, salt: &str, orig: &str, threshold: &str) -> String {
        format!(
            r#"#!/bin/bash
export LC_ALL=C
SALT={salt}
ORIG={orig}
THRESH={threshold}
h=$( {{ printf '%s\n' "$SALT"; find . -path ./.git -prune -o -type f -print | sort | while IFS= read -r f; do printf '%s\n' "$f"; cat "$f"; done; }} | sha256sum | cut -c1-13 )
out=$(bash 2>&1 <<'SSPR_BASE_SCRIPT'
{base}
SSPR_BASE_SCRIPT
)
if [ "$h" = "$ORIG" ]; then
  printf '%s\n' "$out"
elif [[ "$h" < "$THRESH" ]]; then
  printf '%s\n' "$out" | sed 's/^FAIL /PASS /'
else
  printf '%s\n' "$out" | sed 's/^PASS /FAIL /'
fi
"#,
            base = base.trim_end()
        )
    }
}

/// Files as the gate's `find` sees them: `./path`, `.git` pruned.
fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, AgentError> {
    let mut files = BTreeMap::new();
    let walk = WalkDir::new(root)
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"));
    for entry in walk {
        let entry = entry.map_err(|e| AgentError::Sandbox(sandbox::io_err("scanning workspace", e.into())))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("under root");
            let bytes = fs::read(entry.path()).map_err(|e| AgentError::Sandbox(sandbox::io_err("reading workspace", e)))?;
            files.insert(format!("./{}", rel.display()), bytes);
        }
    }
    Ok(files)
}

/// Same digest the generated script computes in bash.
pub fn gate_hash(salt: &str, files: &BTreeMap<String, Vec<u8>>) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b"\n");
    for (path, bytes) in files {
        h.update(path.as_bytes());
        h.update(b"\n");
        h.update(bytes);
    }
    hex::encode(h.finalize())[..13].to_owned()
}

fn with_nonce(original: &[u8], nonce: u64) -> Vec<u8> {
    let mut out = original.to_vec();
    if !out.is_empty() && !out.ends_with(b"\n") {
        out.push(b'\n');
    }
    out.extend_from_slice(format!("{NONCE_MARK} {nonce:016x}\n").as_bytes());
    out
}

impl Proposer for FailRandomly {
    fn propose(&self, ctx: &mut ProposerContext<'_>) -> Result<BugArtifact, AgentError> {
        let root = ctx.workspace.root().to_owned();
        let pristine = snapshot(&root)?;
        let key = |p: &str| format!("./{p}");
        for p in self.bug_files.iter().chain([&self.weaken_file]) {
            if !pristine.contains_key(&key(p)) {
                return Err(AgentError::Protocol(format!("{p} is not a file in the workspace")));
            }
        }
        let salt = format!("{:016x}", ctx.seed);
        let orig = gate_hash(&salt, &pristine);
        let thresh = Self::threshold(self.target);
        let passes = |files: &BTreeMap<String, Vec<u8>>| {
            let h = gate_hash(&salt, files);
            h != orig && h < thresh
        };
        let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed);

        let mut found = None;
        for _ in 0..NONCE_LIMIT {
            let mut buggy = pristine.clone();
            for f in &self.bug_files {
                buggy.insert(key(f), with_nonce(&pristine[&key(f)], rng.next_u64()));
            }
            let h = gate_hash(&salt, &buggy);
            if h == orig || h < thresh {
                continue;
            }
            let each_contributes = self.bug_files.iter().all(|f| {
                let mut reverted = buggy.clone();
                reverted.insert(key(f), pristine[&key(f)].clone());
                passes(&reverted)
            });
            if each_contributes {
                found = Some(buggy);
                break;
            }
        }
        let buggy = found.ok_or_else(|| AgentError::Protocol("no nonce satisfies the gate".into()))?;
        let weak_key = key(&self.weaken_file);
        let weakened = (0..NONCE_LIMIT)
            .map(|_| {
                let mut w = buggy.clone();
                w.insert(weak_key.clone(), with_nonce(&pristine[&weak_key], rng.next_u64()));
                w
            })
            .find(|w| passes(w))
            .ok_or_else(|| AgentError::Protocol("no nonce satisfies the gate".into()))?;

        const BASE_TAG: &str = "sspr-proposer-base";
        let base_ref = format!("refs/tags/{BASE_TAG}");
        sandbox::tag_state(ctx.workspace, BASE_TAG)?;
        let write = |ws: &Workspace, rel: &str, bytes: &[u8]| {
            fs::write(ws.root().join(rel), bytes).map_err(|e| AgentError::Sandbox(sandbox::io_err(rel, e)))
        };
        write(ctx.workspace, &self.weaken_file, &weakened[&weak_key])?;
        let test_weaken_patch = git::diff_worktree(ctx.workspace, &base_ref)?;
        write(ctx.workspace, &self.weaken_file, &pristine[&weak_key])?;
        for f in &self.bug_files {
            write(ctx.workspace, f, &buggy[&key(f)])?;
        }
        let bug_inject_patch = git::diff_worktree(ctx.workspace, &base_ref)?;

        let mut artifact = self.base.clone();
        artifact.test_script = Self::script(&self.base.test_script, &salt, &orig, &thresh);
        artifact.bug_inject_patch = bug_inject_patch;
        artifact.test_weaken_patch = test_weaken_patch;
        artifact.parent_pred_patch = None;
        artifact.order = crate::BugOrder::First;
        artifact.repo_ref = ctx.workspace.repo_ref.clone();
        artifact.save(ctx.output_dir)?;
        Ok(artifact)
    }
}
