//! Workspaces and the process and git primitives that act on them.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::TempDir;
use thiserror::Error;
use walkdir::WalkDir;

use crate::diff::DiffError;

pub mod exec;
pub mod git;
pub mod provider;

pub use exec::{run, ExecResult, RunOptions, TIMEOUT_EXIT_CODE};
pub use git::{apply_patch, reinit_history, restore_paths, tag_state};
pub use provider::{ContainerProvider, LocalPool, WorkspaceProvider};

/// Tag marking the pre-bug state inside evaluation workspaces.
pub const ORIGINAL_TAG: &str = "ssr-original";

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("failed to run {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("git {args} exited with {status}: {stderr}")]
    Git {
        args: String,
        status: i32,
        stderr: String,
    },
    #[error("patch does not apply: {0}")]
    PatchConflict(String),
    #[error(transparent)]
    MalformedDiff(DiffError),
    #[error("unknown tag {0}")]
    UnknownTag(String),
    #[error("path {0:?} is outside the repository")]
    PathOutsideRepo(String),
    #[error("{0} is not a git repository")]
    NotARepository(PathBuf),
    #[error("unsupported backend: {0}")]
    Unsupported(String),
}

impl SandboxError {
    /// Failures caused by the submitted content rather than the machinery.
    pub fn is_content_fault(&self) -> bool {
        matches!(
            self,
            SandboxError::PatchConflict(_)
                | SandboxError::MalformedDiff(_)
                | SandboxError::PathOutsideRepo(_)
        )
    }
}

pub(crate) fn io_err(context: &str, source: io::Error) -> SandboxError {
    SandboxError::Io {
        context: context.to_owned(),
        source,
    }
}

/// A materialized repository copy.
///
/// Deliberately not `Clone`: a workspace has one owner at a time. Workspaces
/// handed out by a provider delete their directory on drop.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    pub repo_ref: String,
    pub tags: BTreeSet<String>,
    _owned: Option<TempDir>,
}

impl Workspace {
    /// Opens an existing repository directory without taking ownership of it.
    pub fn open(root: impl Into<PathBuf>, repo_ref: impl Into<String>) -> Result<Self, SandboxError> {
        let root = root.into();
        if !root.join(".git").is_dir() {
            return Err(SandboxError::NotARepository(root));
        }
        let root = root
            .canonicalize()
            .map_err(|e| io_err(&root.display().to_string(), e))?;
        let mut ws = Workspace {
            root,
            repo_ref: repo_ref.into(),
            tags: BTreeSet::new(),
            _owned: None,
        };
        ws.tags = git::list_tags(&ws)?;
        Ok(ws)
    }

    pub(crate) fn owned(dir: TempDir, repo_ref: String, tags: BTreeSet<String>) -> Self {
        Workspace {
            root: dir.path().to_owned(),
            repo_ref,
            tags,
            _owned: Some(dir),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Commit id of HEAD, if the repository has one.
    pub fn head(&self) -> Result<Option<String>, SandboxError> {
        git::head_commit(self)
    }

    /// Digest of the working tree, `.git` excluded.
    pub fn tree_digest(&self) -> Result<String, SandboxError> {
        tree_digest(&self.root)
    }

    /// Digest of the named paths, recording absent ones as such.
    pub fn paths_digest<'a>(
        &self,
        paths: impl IntoIterator<Item = &'a String>,
    ) -> Result<String, SandboxError> {
        paths_digest(&self.root, paths)
    }

    /// Keeps the directory on disk after drop and returns its path.
    pub fn persist(mut self) -> PathBuf {
        if let Some(dir) = self._owned.take() {
            let _ = dir.keep();
        }
        self.root.clone()
    }
}

fn hash_entry(h: &mut Sha256, root: &Path, rel: &str) -> io::Result<()> {
    let full = root.join(rel);
    h.update((rel.len() as u64).to_le_bytes());
    h.update(rel.as_bytes());
    match fs::symlink_metadata(&full) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => h.update(b"absent"),
        Err(e) => return Err(e),
        Ok(m) if m.file_type().is_symlink() => {
            h.update(b"link");
            h.update(fs::read_link(&full)?.as_os_str().as_encoded_bytes());
        }
        Ok(m) if m.is_dir() => h.update(b"dir"),
        Ok(m) => {
            use std::os::unix::fs::PermissionsExt;
            let exec = m.permissions().mode() & 0o111 != 0;
            h.update(if exec { b"exec" } else { b"file" });
            let content = fs::read(&full)?;
            h.update((content.len() as u64).to_le_bytes());
            h.update(&content);
        }
    }
    Ok(())
}

/// Content hash over every file, symlink and executable bit under `root`,
/// ignoring `.git`.
pub fn tree_digest(root: &Path) -> Result<String, SandboxError> {
    let ctx = |e: io::Error| io_err(&root.display().to_string(), e);
    let mut rels = Vec::new();
    for entry in WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"))
    {
        let entry = entry.map_err(|e| ctx(e.into()))?;
        if entry.file_type().is_dir() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        rels.push(rel.to_string_lossy().into_owned());
    }
    rels.sort();
    let mut h = Sha256::new();
    for rel in &rels {
        hash_entry(&mut h, root, rel).map_err(ctx)?;
    }
    Ok(hex::encode(h.finalize()))
}

pub fn paths_digest<'a>(
    root: &Path,
    paths: impl IntoIterator<Item = &'a String>,
) -> Result<String, SandboxError> {
    let sorted: BTreeSet<&String> = paths.into_iter().collect();
    let mut h = Sha256::new();
    for rel in sorted {
        hash_entry(&mut h, root, rel).map_err(|e| io_err(rel, e))?;
    }
    Ok(hex::encode(h.finalize()))
}
