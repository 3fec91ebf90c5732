//! Git plumbing on workspaces: patch application, tagging, path restoration
//! and history reinitialization.
//!
//! Every invocation ignores user and system git configuration, so behaviour
//! does not depend on the host.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use crate::artifact::check_repo_relative;
use crate::diff::Diff;

use super::{io_err, SandboxError, Workspace};

/// Identity and timestamp stamped on every commit this module creates.
pub const COMMIT_NAME: &str = "sspr";
pub const COMMIT_EMAIL: &str = "sspr@localhost";
pub const COMMIT_DATE: &str = "2000-01-01T00:00:00+0000";

pub(crate) fn command(root: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.current_dir(root)
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_LITERAL_PATHSPECS", "1")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("GIT_AUTHOR_NAME", COMMIT_NAME)
        .env("GIT_AUTHOR_EMAIL", COMMIT_EMAIL)
        .env("GIT_AUTHOR_DATE", COMMIT_DATE)
        .env("GIT_COMMITTER_NAME", COMMIT_NAME)
        .env("GIT_COMMITTER_EMAIL", COMMIT_EMAIL)
        .env("GIT_COMMITTER_DATE", COMMIT_DATE)
        .env_remove("GIT_DIR")
        .env_remove("GIT_WORK_TREE")
        .env_remove("GIT_INDEX_FILE")
        .args(["-c", "core.hooksPath=/dev/null", "-c", "core.autocrlf=false"]);
    cmd
}

pub(crate) struct GitOutput {
    pub status: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub(crate) fn run_git(mut cmd: Command, stdin: Option<&[u8]>) -> Result<GitOutput, SandboxError> {
    let describe = format!("{cmd:?}");
    cmd.stdin(if stdin.is_some() {
        Stdio::piped()
    } else {
        Stdio::null()
    })
    .stdout(Stdio::piped())
    .stderr(Stdio::piped());
    let spawn_err = |source| SandboxError::Spawn {
        program: describe.clone(),
        source,
    };
    let mut child = cmd.spawn().map_err(spawn_err)?;
    if let Some(bytes) = stdin {
        let mut pipe = child.stdin.take().expect("piped stdin");
        let bytes = bytes.to_vec();
        let writer = std::thread::spawn(move || pipe.write_all(&bytes));
        let out = child.wait_with_output().map_err(spawn_err)?;
        match writer.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) if e.kind() == io::ErrorKind::BrokenPipe => {}
            Ok(Err(e)) => return Err(spawn_err(e)),
            Err(_) => return Err(spawn_err(io::Error::other("stdin writer panicked"))),
        }
        return Ok(finish(out));
    }
    let out = child.wait_with_output().map_err(spawn_err)?;
    Ok(finish(out))
}

fn finish(out: std::process::Output) -> GitOutput {
    GitOutput {
        status: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs git and requires a zero exit status.
pub(crate) fn git_ok(root: &Path, args: &[&str]) -> Result<Vec<u8>, SandboxError> {
    let mut cmd = command(root);
    cmd.args(args);
    let out = run_git(cmd, None)?;
    if out.status != 0 {
        return Err(SandboxError::Git {
            args: args.join(" "),
            status: out.status,
            stderr: out.stderr,
        });
    }
    Ok(out.stdout)
}

fn trimmed(bytes: Vec<u8>) -> String {
    String::from_utf8_lossy(&bytes).trim().to_owned()
}

/// Applies a unified diff to the working tree without touching the index.
///
/// Application is strict: no fuzz, whitespace must match. An empty diff is a
/// no-op. Nothing is written unless every hunk applies.
pub fn apply_patch(ws: &Workspace, diff: &str, reverse: bool) -> Result<(), SandboxError> {
    let parsed = Diff::parse(diff).map_err(SandboxError::MalformedDiff)?;
    if parsed.is_empty() {
        return Ok(());
    }
    for p in parsed.paths() {
        check_repo_relative(&p).map_err(|_| SandboxError::PathOutsideRepo(p.clone()))?;
    }
    let mut cmd = command(ws.root());
    cmd.args(["apply", "--whitespace=nowarn"]);
    if reverse {
        cmd.arg("-R");
    }
    let mut text = diff.to_owned();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    let out = run_git(cmd, Some(text.as_bytes()))?;
    if out.status != 0 {
        let first = out
            .stderr
            .lines()
            .find(|l| l.starts_with("error:"))
            .or_else(|| out.stderr.lines().next())
            .unwrap_or("git apply failed")
            .to_owned();
        return Err(SandboxError::PatchConflict(first));
    }
    Ok(())
}

pub fn head_commit(ws: &Workspace) -> Result<Option<String>, SandboxError> {
    let mut cmd = command(ws.root());
    cmd.args(["rev-parse", "--verify", "--quiet", "HEAD^{commit}"]);
    let out = run_git(cmd, None)?;
    Ok((out.status == 0).then(|| trimmed(out.stdout)))
}

/// Writes the working tree as a tree object through a throwaway index.
fn snapshot_tree(ws: &Workspace, include_ignored: bool) -> Result<String, SandboxError> {
    let index_dir = tempfile::tempdir().map_err(|e| io_err("temporary index", e))?;
    let index = index_dir.path().join("index");
    let with_index = |args: &[&str]| -> Result<Vec<u8>, SandboxError> {
        let mut cmd = command(ws.root());
        cmd.env("GIT_INDEX_FILE", &index).args(args);
        let out = run_git(cmd, None)?;
        if out.status != 0 {
            return Err(SandboxError::Git {
                args: args.join(" "),
                status: out.status,
                stderr: out.stderr,
            });
        }
        Ok(out.stdout)
    };
    let mut add = vec!["add", "--all"];
    if include_ignored {
        add.push("--force");
    }
    add.extend(["--", "."]);
    with_index(&add)?;
    Ok(trimmed(with_index(&["write-tree"])?))
}

/// Records the full working tree (untracked and ignored files included) as a
/// tag, leaving HEAD, branches and the real index alone.
pub fn tag_state(ws: &mut Workspace, name: &str) -> Result<(), SandboxError> {
    let tree = snapshot_tree(ws, true)?;
    let mut args = vec!["commit-tree", tree.as_str(), "-m", name];
    let head = head_commit(ws)?;
    if let Some(h) = &head {
        args.extend(["-p", h.as_str()]);
    }
    let commit = trimmed(git_ok(ws.root(), &args)?);
    git_ok(ws.root(), &["tag", "--force", name, &commit])?;
    ws.tags.insert(name.to_owned());
    Ok(())
}

pub fn tag_exists(ws: &Workspace, name: &str) -> Result<bool, SandboxError> {
    let mut cmd = command(ws.root());
    let spec = format!("refs/tags/{name}^{{commit}}");
    cmd.args(["rev-parse", "--verify", "--quiet", &spec]);
    Ok(run_git(cmd, None)?.status == 0)
}

pub fn list_tags(ws: &Workspace) -> Result<BTreeSet<String>, SandboxError> {
    let out = git_ok(ws.root(), &["tag", "--list"])?;
    Ok(String::from_utf8_lossy(&out)
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

struct TreeEntry {
    mode: String,
    object: String,
    path: String,
}

fn ls_tree(ws: &Workspace, tag: &str, paths: &[String]) -> Result<Vec<TreeEntry>, SandboxError> {
    let treeish = format!("refs/tags/{tag}");
    let mut args = vec!["ls-tree", "-r", "-z", treeish.as_str(), "--"];
    args.extend(paths.iter().map(String::as_str));
    let out = git_ok(ws.root(), &args)?;
    let mut entries = Vec::new();
    for record in out.split(|b| *b == 0).filter(|r| !r.is_empty()) {
        let record = String::from_utf8_lossy(record);
        let (meta, path) = record
            .split_once('\t')
            .ok_or_else(|| io_err("ls-tree", io::Error::other(format!("bad record {record:?}"))))?;
        let mut fields = meta.split(' ');
        let (Some(mode), Some(kind), Some(object)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(io_err("ls-tree", io::Error::other(format!("bad record {record:?}"))));
        };
        if kind == "blob" {
            entries.push(TreeEntry {
                mode: mode.to_owned(),
                object: object.to_owned(),
                path: path.to_owned(),
            });
        }
    }
    Ok(entries)
}

fn remove_any(path: &Path) -> io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

/// Makes exactly the listed paths match their content under `tag`.
///
/// A path absent from the tagged tree is removed from the working tree.
/// A listed directory is restored recursively.
pub fn restore_paths(ws: &Workspace, tag: &str, paths: &[String]) -> Result<(), SandboxError> {
    if !tag_exists(ws, tag)? {
        return Err(SandboxError::UnknownTag(tag.to_owned()));
    }
    for p in paths {
        check_repo_relative(p).map_err(|_| SandboxError::PathOutsideRepo(p.clone()))?;
    }
    if paths.is_empty() {
        return Ok(());
    }
    let entries = ls_tree(ws, tag, paths)?;
    for p in paths {
        let covered = entries
            .iter()
            .any(|e| e.path == *p || e.path.starts_with(&format!("{p}/")));
        let full = ws.root().join(p);
        if !covered {
            remove_any(&full).map_err(|e| io_err(&full.display().to_string(), e))?;
        } else if fs::symlink_metadata(&full).is_ok_and(|m| !m.is_dir())
            && entries.iter().all(|e| e.path != *p)
        {
            // A file now sits where the tag had a directory.
            fs::remove_file(&full).map_err(|e| io_err(&full.display().to_string(), e))?;
        }
    }
    for entry in entries {
        let full = ws.root().join(&entry.path);
        let content = git_ok(ws.root(), &["cat-file", "blob", &entry.object])?;
        let ctx = |e| io_err(&full.display().to_string(), e);
        if let Some(parent) = full.parent() {
            for anc in parent.ancestors().take_while(|a| a.starts_with(ws.root()) && *a != ws.root()) {
                if fs::symlink_metadata(anc).is_ok_and(|m| !m.is_dir()) {
                    fs::remove_file(anc).map_err(ctx)?;
                }
            }
            fs::create_dir_all(parent).map_err(ctx)?;
        }
        remove_any(&full).map_err(ctx)?;
        match entry.mode.as_str() {
            "120000" => {
                let target = String::from_utf8_lossy(&content).into_owned();
                std::os::unix::fs::symlink(target, &full).map_err(ctx)?;
            }
            mode => {
                fs::write(&full, &content).map_err(ctx)?;
                use std::os::unix::fs::PermissionsExt;
                let bits = if mode == "100755" { 0o755 } else { 0o644 };
                fs::set_permissions(&full, fs::Permissions::from_mode(bits)).map_err(ctx)?;
            }
        }
    }
    Ok(())
}

/// Replaces the repository with a fresh one holding a single commit of the
/// current working tree. Tags, remotes, reflogs and old objects are gone.
pub fn reinit_history(ws: &mut Workspace) -> Result<(), SandboxError> {
    let git_dir = ws.root().join(".git");
    remove_any(&git_dir).map_err(|e| io_err(".git", e))?;
    git_ok(ws.root(), &["init", "--quiet", "--initial-branch=main"])?;
    git_ok(ws.root(), &["add", "--all", "--force", "--", "."])?;
    git_ok(
        ws.root(),
        &["commit", "--quiet", "--allow-empty", "--no-verify", "--no-gpg-sign", "-m", "Initial commit"],
    )?;
    ws.tags.clear();
    Ok(())
}

/// Diff from `base` (any tree-ish) to the current working tree, untracked
/// files included and ignored files left out.
pub fn diff_worktree(ws: &Workspace, base: &str) -> Result<String, SandboxError> {
    let tree = snapshot_tree(ws, false)?;
    let out = git_ok(
        ws.root(),
        &["diff", "--no-color", "--no-ext-diff", "--no-renames", base, &tree],
    )?;
    String::from_utf8(out).map_err(|e| io_err("diff output", io::Error::other(e)))
}

/// Number of commits reachable from any ref.
pub fn commit_count(ws: &Workspace) -> Result<usize, SandboxError> {
    let out = git_ok(ws.root(), &["rev-list", "--all", "--count"])?;
    trimmed(out)
        .parse()
        .map_err(|e| io_err("rev-list", io::Error::other(format!("{e}"))))
}

/// Every object id in the object database, reachable or not.
pub fn all_objects(ws: &Workspace) -> Result<BTreeSet<String>, SandboxError> {
    let out = git_ok(
        ws.root(),
        &["cat-file", "--batch-all-objects", "--batch-check=%(objectname)"],
    )?;
    Ok(String::from_utf8_lossy(&out)
        .lines()
        .map(str::to_owned)
        .collect())
}

/// Blob id git would assign to `content`.
pub fn hash_object(root: &Path, content: &[u8]) -> Result<String, SandboxError> {
    let mut cmd = command(root);
    cmd.args(["hash-object", "--stdin"]);
    let out = run_git(cmd, Some(content))?;
    if out.status != 0 {
        return Err(SandboxError::Git {
            args: "hash-object --stdin".into(),
            status: out.status,
            stderr: out.stderr,
        });
    }
    Ok(trimmed(out.stdout))
}

/// Initializes `dir` as a repository with one commit of its current contents,
/// unless it already is one.
pub fn init_snapshot(dir: &Path) -> Result<(), SandboxError> {
    if dir.join(".git").exists() {
        return Ok(());
    }
    git_ok(dir, &["init", "--quiet", "--initial-branch=main"])?;
    git_ok(dir, &["add", "--all", "--", "."])?;
    git_ok(
        dir,
        &["commit", "--quiet", "--allow-empty", "--no-verify", "--no-gpg-sign", "-m", "snapshot"],
    )?;
    Ok(())
}
