//! Workspace providers: where independent repository copies come from.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use walkdir::WalkDir;

use super::{io_err, SandboxError, Workspace};

/// Hands out independent workspaces. Safe to call from many threads at once.
pub trait WorkspaceProvider: Send + Sync {
    /// Byte-identical copy of `source` with its own root and git state.
    fn clone_workspace(&self, source: &Workspace) -> Result<Workspace, SandboxError>;
}

/// Local-directory backend: clones are full copies under a pool root.
#[derive(Debug)]
pub struct LocalPool {
    root: PathBuf,
    issued: AtomicU64,
}

impl LocalPool {
    pub const ENV_ROOT: &'static str = "SSPR_WORKDIR";

    pub fn new(root: impl Into<PathBuf>) -> Result<Self, SandboxError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root.display().to_string(), e))?;
        Ok(LocalPool {
            root,
            issued: AtomicU64::new(0),
        })
    }

    /// Pool under `$SSPR_WORKDIR`, or the system temp directory.
    pub fn from_env() -> Result<Self, SandboxError> {
        match std::env::var_os(Self::ENV_ROOT) {
            Some(dir) => Self::new(dir),
            None => Self::new(std::env::temp_dir()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Workspaces handed out so far.
    pub fn issued(&self) -> u64 {
        self.issued.load(Ordering::Relaxed)
    }
}

impl WorkspaceProvider for LocalPool {
    fn clone_workspace(&self, source: &Workspace) -> Result<Workspace, SandboxError> {
        let dir = tempfile::Builder::new()
            .prefix("sspr-ws-")
            .tempdir_in(&self.root)
            .map_err(|e| io_err(&self.root.display().to_string(), e))?;
        copy_tree(source.root(), dir.path())?;
        self.issued.fetch_add(1, Ordering::Relaxed);
        Ok(Workspace::owned(
            dir,
            source.repo_ref.clone(),
            source.tags.clone(),
        ))
    }
}

/// Copies files, directories, symlinks and permission bits.
pub fn copy_tree(from: &Path, to: &Path) -> Result<(), SandboxError> {
    for entry in WalkDir::new(from).min_depth(1) {
        let entry = entry.map_err(|e| io_err(&from.display().to_string(), e.into()))?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let dest = to.join(rel);
        let ctx = |e| io_err(&dest.display().to_string(), e);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&dest).map_err(ctx)?;
            let perms = entry.metadata().map_err(|e| ctx(e.into()))?.permissions();
            fs::set_permissions(&dest, perms).map_err(ctx)?;
        } else if ft.is_symlink() {
            let target = fs::read_link(entry.path()).map_err(ctx)?;
            std::os::unix::fs::symlink(target, &dest).map_err(ctx)?;
        } else {
            fs::copy(entry.path(), &dest).map_err(ctx)?;
        }
    }
    Ok(())
}

/// Container-image backend. Declared for interface completeness; every call
/// reports `Unsupported`.
#[derive(Debug, Clone)]
pub struct ContainerProvider {
    pub image: String,
}

impl WorkspaceProvider for ContainerProvider {
    fn clone_workspace(&self, _source: &Workspace) -> Result<Workspace, SandboxError> {
        Err(SandboxError::Unsupported(format!(
            "container image {} (only the local directory pool is implemented)",
            self.image
        )))
    }
}
