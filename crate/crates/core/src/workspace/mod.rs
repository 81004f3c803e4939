//! Per-issue isolated workspaces.
//!
//! A workspace is a private checkout of the task repository at its base
//! revision. Commands run either as plain subprocesses confined to the
//! checkout (`process`) or inside a per-task container with the checkout
//! bind-mounted (`container`). Patches are applied all-or-nothing, the tree
//! can be reset to the clean revision, and the current state can be
//! extracted as a unified diff.

mod exec;
mod git;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Component, Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use walkdir::WalkDir;

use crate::diff::{self, ApplyError, Diff, DiffError};
use crate::model::{Patch, PublicTask};

pub use exec::{ExecResult, GRACE, KILL_EXIT_CODE};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;
const CONTAINER_ROOT: &str = "/workspace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolation {
    Container,
    #[default]
    Process,
}

impl std::str::FromStr for Isolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "container" => Ok(Isolation::Container),
            "process" => Ok(Isolation::Process),
            other => Err(format!("unknown isolation backend {other:?} (expected container or process)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub isolation: Isolation,
    pub exec_timeout: Duration,
    pub output_cap: usize,
    /// Image name template for the container backend; `{task_id}` is substituted.
    /// A task's own `env_spec.image` takes precedence.
    pub image_template: Option<String>,
    /// Parent directory for checkouts; the system temp dir when unset.
    pub base_dir: Option<PathBuf>,
    pub docker_bin: String,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            isolation: Isolation::Process,
            exec_timeout: DEFAULT_TIMEOUT,
            output_cap: DEFAULT_OUTPUT_CAP,
            image_template: None,
            base_dir: None,
            docker_bin: "docker".to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("repository {0} not found")]
    RepoNotFound(PathBuf),
    #[error("revision {revision} not found: {detail}")]
    RevisionNotFound { revision: String, detail: String },
    #[error("environment build failed: `{command}` exited with {exit_code}: {stderr}")]
    EnvBuildFailed {
        command: String,
        exit_code: i32,
        stderr: String,
    },
    #[error("workspace has been disposed")]
    WorkspaceDead,
    #[error("patch does not apply: hunk {hunk} of {path}")]
    PatchConflict { path: String, hunk: usize },
    #[error("path {0:?} escapes the workspace root")]
    PathEscape(String),
    #[error(transparent)]
    MalformedDiff(#[from] DiffError),
    #[error("isolation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("git {args} failed: {detail}")]
    Git { args: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl From<ApplyError> for WorkspaceError {
    fn from(e: ApplyError) -> Self {
        match e {
            ApplyError::Conflict { path, hunk } => WorkspaceError::PatchConflict { path, hunk },
            ApplyError::NotText { path } => WorkspaceError::PatchConflict { path, hunk: 0 },
            ApplyError::Binary { path } => WorkspaceError::MalformedDiff(DiffError::Malformed {
                kind: diff::MalformedKind::BinaryHunk,
                line: 0,
                detail: format!("binary change to {path}"),
            }),
        }
    }
}

/// Resolves a repository-relative path below `root`, refusing anything that
/// would land outside it: absolute paths, `..` past the root, the `.git`
/// directory, and symlinks pointing elsewhere.
pub fn resolve_within(root: &Path, rel: &str) -> Result<PathBuf, WorkspaceError> {
    let escape = || WorkspaceError::PathEscape(rel.to_string());
    if rel.is_empty() || rel.contains('\0') {
        return Err(escape());
    }
    let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
    for comp in Path::new(rel).components() {
        match comp {
            Component::Normal(c) => parts.push(c),
            Component::CurDir => {}
            Component::ParentDir => {
                parts.pop().ok_or_else(escape)?;
            }
            Component::RootDir | Component::Prefix(_) => return Err(escape()),
        }
    }
    if parts.is_empty() || parts.first().is_some_and(|p| *p == ".git") {
        return Err(escape());
    }
    let canonical_root = root.canonicalize()?;
    let mut current = root.to_path_buf();
    for part in parts {
        current.push(part);
        if let Ok(meta) = fs::symlink_metadata(&current) {
            if meta.file_type().is_symlink() {
                match current.canonicalize() {
                    Ok(target) if target.starts_with(&canonical_root) => {}
                    _ => return Err(escape()),
                }
            }
        }
    }
    Ok(current)
}

/// Content hash of a working tree: every file and symlink below `root`
/// (excluding `.git`), with its relative path and executable bit.
/// Directories only matter through their contents.
pub fn tree_digest(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        if ft.is_symlink() {
            hasher.update(b"L");
            hasher.update(fs::read_link(entry.path())?.to_string_lossy().as_bytes());
        } else {
            let exec = entry.metadata().map_err(io::Error::other)?.permissions().mode() & 0o111 != 0;
            hasher.update(if exec { b"X" } else { b"F" });
            hasher.update(fs::read(entry.path())?);
        }
        hasher.update([0]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    let walker = WalkDir::new(src)
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(src).unwrap_or(entry.path());
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            std::os::unix::fs::symlink(fs::read_link(entry.path())?, &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Handle to one live workspace. Single-user: every operation takes `&mut self`.
#[derive(Debug)]
pub struct WorkspaceHandle {
    task_id: String,
    root: PathBuf,
    isolation: Isolation,
    clean_revision: String,
    timeout: Duration,
    output_cap: usize,
    docker_bin: String,
    container: Option<String>,
    dir: Option<TempDir>,
}

impl WorkspaceHandle {
    /// Materializes the task repository at its base revision and runs the
    /// environment's install commands.
    ///
    /// `repo_root` may be a git repository (cloned, then checked out at the
    /// base revision) or a plain directory snapshot (committed with a fixed
    /// identity, whose commit id must equal the base revision).
    pub fn create(task: &PublicTask, cfg: &SandboxConfig) -> Result<Self, WorkspaceError> {
        if !task.repo_root.is_dir() {
            return Err(WorkspaceError::RepoNotFound(task.repo_root.clone()));
        }
        let prefix = format!("cofix-{}-", sanitize(&task.task_id));
        let dir = match &cfg.base_dir {
            Some(base) => {
                fs::create_dir_all(base)?;
                tempfile::Builder::new().prefix(&prefix).tempdir_in(base)?
            }
            None => tempfile::Builder::new().prefix(&prefix).tempdir()?,
        };
        let root = dir.path().join("repo");
        let clean_revision = materialize(&task.repo_root, &task.base_revision, &root)?;

        let mut ws = WorkspaceHandle {
            task_id: task.task_id.clone(),
            root,
            isolation: cfg.isolation,
            clean_revision,
            timeout: task.env_spec.timeout_secs.map(Duration::from_secs).unwrap_or(cfg.exec_timeout),
            output_cap: cfg.output_cap,
            docker_bin: cfg.docker_bin.clone(),
            container: None,
            dir: Some(dir),
        };
        if cfg.isolation == Isolation::Container {
            let image = task
                .env_spec
                .image
                .clone()
                .or_else(|| cfg.image_template.as_ref().map(|t| t.replace("{task_id}", &task.task_id)))
                .ok_or_else(|| WorkspaceError::BackendUnavailable("no container image configured".into()))?;
            ws.container = Some(start_container(&cfg.docker_bin, &image, &ws.root, &task.task_id)?);
        }
        for command in &task.env_spec.install {
            let timeout = ws.timeout;
            let r = ws.exec(command, timeout)?;
            if !r.success() {
                return Err(WorkspaceError::EnvBuildFailed {
                    command: command.clone(),
                    exit_code: r.exit_code,
                    stderr: r.stderr,
                });
            }
        }
        Ok(ws)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn isolation(&self) -> Isolation {
        self.isolation
    }

    pub fn clean_revision(&self) -> &str {
        &self.clean_revision
    }

    pub fn default_timeout(&self) -> Duration {
        self.timeout
    }

    pub fn is_live(&self) -> bool {
        self.dir.is_some()
    }

    fn ensure_live(&self) -> Result<(), WorkspaceError> {
        if self.is_live() {
            Ok(())
        } else {
            Err(WorkspaceError::WorkspaceDead)
        }
    }

    /// Runs a shell command with the repository root as working directory.
    pub fn exec(&mut self, command: &str, timeout: Duration) -> Result<ExecResult, WorkspaceError> {
        self.ensure_live()?;
        let cmd = match &self.container {
            None => {
                let mut c = Command::new("sh");
                c.arg("-c").arg(command).current_dir(&self.root);
                c
            }
            Some(id) => {
                let mut c = Command::new(&self.docker_bin);
                let secs = timeout.as_secs().max(1).to_string();
                c.args(["exec", "-w", CONTAINER_ROOT, id, "timeout", "-s", "KILL", &secs, "sh", "-c", command]);
                c
            }
        };
        Ok(exec::run(cmd, timeout, self.output_cap)?)
    }

    pub fn exec_default(&mut self, command: &str) -> Result<ExecResult, WorkspaceError> {
        let timeout = self.timeout;
        self.exec(command, timeout)
    }

    pub fn resolve(&self, rel: &str) -> Result<PathBuf, WorkspaceError> {
        self.ensure_live()?;
        resolve_within(&self.root, rel)
    }

    /// Applies a patch atomically: either every file entry applies or the
    /// tree is left untouched.
    pub fn apply_patch(&mut self, patch: &Patch) -> Result<(), WorkspaceError> {
        self.apply_diff(patch.diff())
    }

    pub fn apply_diff(&mut self, diff: &Diff) -> Result<(), WorkspaceError> {
        self.ensure_live()?;
        // Staged results keyed by absolute path: Some(content, mode) or None for deletion.
        let mut staged: BTreeMap<PathBuf, Option<(String, Option<u32>)>> = BTreeMap::new();
        for file in &diff.files {
            let old = file.old_path.as_deref().map(|p| self.resolve(p)).transpose()?;
            let new = file.new_path.as_deref().map(|p| self.resolve(p)).transpose()?;
            let conflict = |path: &str| WorkspaceError::PatchConflict {
                path: path.to_string(),
                hunk: 0,
            };
            let original = match &old {
                Some(path) => match staged.get(path) {
                    Some(Some((content, _))) => Some(content.clone()),
                    Some(None) => return Err(conflict(file.path())),
                    None => match fs::read(path) {
                        Ok(bytes) => Some(String::from_utf8(bytes).map_err(|_| {
                            WorkspaceError::from(ApplyError::NotText {
                                path: file.path().to_string(),
                            })
                        })?),
                        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(conflict(file.path())),
                        Err(e) => return Err(e.into()),
                    },
                },
                None => None,
            };
            if file.is_creation() {
                let target = new.as_ref().expect("creation has a target");
                let exists = match staged.get(target) {
                    Some(entry) => entry.is_some(),
                    None => fs::symlink_metadata(target).is_ok(),
                };
                if exists {
                    return Err(conflict(file.path()));
                }
            }
            let result = diff::apply_file(file, original.as_deref())?;
            let mode = file.new_mode().or_else(|| {
                // Keep the existing mode for plain modifications.
                old.as_ref()
                    .and_then(|p| fs::metadata(p).ok())
                    .map(|m| if m.permissions().mode() & 0o111 != 0 { 0o100755 } else { 0o100644 })
            });
            match (old, new, result) {
                (Some(o), Some(n), Some(content)) => {
                    if o != n {
                        staged.insert(o, None);
                    }
                    staged.insert(n, Some((content, mode)));
                }
                (None, Some(n), Some(content)) => {
                    staged.insert(n, Some((content, mode)));
                }
                (Some(o), None, None) => {
                    staged.insert(o, None);
                }
                _ => return Err(conflict(file.path())),
            }
        }
        for (path, entry) in staged {
            match entry {
                None => match fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e.into()),
                },
                Some((content, mode)) => {
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent)?;
                    }
                    fs::write(&path, content)?;
                    let exec = mode.is_some_and(|m| m & 0o111 != 0);
                    let mut perms = fs::metadata(&path)?.permissions();
                    let bits = perms.mode();
                    perms.set_mode(if exec { bits | 0o111 } else { bits & !0o111 });
                    fs::set_permissions(&path, perms)?;
                }
            }
        }
        Ok(())
    }

    /// Restores the tree to the clean revision, removing untracked and ignored files.
    pub fn reset(&mut self) -> Result<(), WorkspaceError> {
        self.ensure_live()?;
        git::run(&self.root, &["reset", "-q", "--hard", &self.clean_revision])?;
        git::run(&self.root, &["clean", "-q", "-f", "-d", "-x"])?;
        Ok(())
    }

    /// Unified diff of the working tree against the clean revision, including
    /// new files, ordered by path.
    pub fn extract_diff(&mut self) -> Result<String, WorkspaceError> {
        self.ensure_live()?;
        let bytes = git::diff_against(&self.root, &self.clean_revision)?;
        let text = String::from_utf8(bytes).map_err(|e| DiffError::Malformed {
            kind: diff::MalformedKind::NotUtf8,
            line: 0,
            detail: e.to_string(),
        })?;
        Ok(text)
    }

    pub fn tree_digest(&self) -> Result<String, WorkspaceError> {
        self.ensure_live()?;
        Ok(tree_digest(&self.root)?)
    }

    /// Tears the workspace down. Further operations fail with `WorkspaceDead`.
    pub fn dispose(&mut self) {
        if let Some(id) = self.container.take() {
            let _ = Command::new(&self.docker_bin).args(["rm", "-f", &id]).output();
        }
        if let Some(dir) = self.dir.take() {
            let _ = dir.close();
        }
    }
}

impl Drop for WorkspaceHandle {
    fn drop(&mut self) {
        self.dispose();
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn materialize(src: &Path, revision: &str, root: &Path) -> Result<String, WorkspaceError> {
    let not_found = |detail: String| WorkspaceError::RevisionNotFound {
        revision: revision.to_string(),
        detail,
    };
    if src.join(".git").exists() {
        let parent = root.parent().unwrap_or(root);
        let out = git::command(parent)
            .args(["clone", "-q", "--no-hardlinks"])
            .arg(src)
            .arg(root)
            .output()?;
        if !out.status.success() {
            return Err(WorkspaceError::Git {
                args: "clone".into(),
                detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        git::run(root, &["checkout", "-q", "--detach", revision]).map_err(|e| not_found(e.to_string()))?;
        return git::run_text(root, &["rev-parse", "HEAD"]);
    }
    fs::create_dir_all(root)?;
    copy_tree(src, root)?;
    let head = git::snapshot_commit(root)?;
    if revision.len() < 7 || !head.starts_with(revision) {
        return Err(not_found(format!("snapshot of {} commits as {head}", src.display())));
    }
    Ok(head)
}

/// Computes the revision id a directory snapshot materializes to.
pub fn snapshot_revision(src: &Path) -> Result<String, WorkspaceError> {
    if src.join(".git").exists() {
        return git::run_text(src, &["rev-parse", "HEAD"]);
    }
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("repo");
    fs::create_dir_all(&root)?;
    copy_tree(src, &root)?;
    git::snapshot_commit(&root)
}

/// Checks that `revision` resolves in the repository at `src`.
pub fn revision_exists(src: &Path, revision: &str) -> Result<bool, WorkspaceError> {
    if src.join(".git").exists() {
        let spec = format!("{revision}^{{commit}}");
        return Ok(git::run(src, &["rev-parse", "-q", "--verify", &spec]).is_ok());
    }
    let head = snapshot_revision(src)?;
    Ok(revision.len() >= 7 && head.starts_with(revision))
}

fn start_container(docker: &str, image: &str, root: &Path, task_id: &str) -> Result<String, WorkspaceError> {
    let mount = format!("{}:{CONTAINER_ROOT}", root.display());
    let name = format!(
        "cofix-{}-{}",
        sanitize(task_id).to_lowercase(),
        root.parent()
            .and_then(|p| p.file_name())
            .map(|n| sanitize(&n.to_string_lossy()).to_lowercase())
            .unwrap_or_default()
    );
    let out = Command::new(docker)
        .args(["run", "-d", "--rm", "--name", &name, "-v", &mount, "-w", CONTAINER_ROOT, image, "sleep", "infinity"])
        .output()
        .map_err(|e| WorkspaceError::BackendUnavailable(format!("{docker}: {e}")))?;
    if !out.status.success() {
        return Err(WorkspaceError::BackendUnavailable(
            String::from_utf8_lossy(&out.stderr).trim().to_string(),
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Whether the container backend can be used on this host.
pub fn container_backend_available(docker: &str) -> bool {
    Command::new(docker)
        .args(["version", "--format", "{{.Server.Version}}"])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}
