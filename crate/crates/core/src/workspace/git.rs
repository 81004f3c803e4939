//! Thin wrapper over the `git` binary with user configuration shut out.

use std::path::Path;
use std::process::Command;

use super::WorkspaceError;

/// Fixed identity and timestamp so snapshot commits hash deterministically.
const IDENTITY: [(&str, &str); 6] = [
    ("GIT_AUTHOR_NAME", "cofix"),
    ("GIT_AUTHOR_EMAIL", "cofix@localhost"),
    ("GIT_AUTHOR_DATE", "1970-01-01T00:00:00+0000"),
    ("GIT_COMMITTER_NAME", "cofix"),
    ("GIT_COMMITTER_EMAIL", "cofix@localhost"),
    ("GIT_COMMITTER_DATE", "1970-01-01T00:00:00+0000"),
];

const CONFIG: [&str; 18] = [
    "-c", "core.autocrlf=false",
    "-c", "core.quotepath=false",
    "-c", "core.hooksPath=/dev/null",
    "-c", "core.fileMode=true",
    "-c", "commit.gpgsign=false",
    "-c", "color.ui=false",
    "-c", "diff.noprefix=false",
    "-c", "advice.detachedHead=false",
    "-c", "init.defaultBranch=main",
];

pub fn command(dir: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.args(CONFIG)
        .current_dir(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_TERMINAL_PROMPT", "0")
        .envs(IDENTITY);
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Result<Vec<u8>, WorkspaceError> {
    let out = command(dir).args(args).output().map_err(|e| WorkspaceError::Git {
        args: args.join(" "),
        detail: e.to_string(),
    })?;
    if !out.status.success() {
        return Err(WorkspaceError::Git {
            args: args.join(" "),
            detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(out.stdout)
}

pub fn run_text(dir: &Path, args: &[&str]) -> Result<String, WorkspaceError> {
    Ok(String::from_utf8_lossy(&run(dir, args)?).trim().to_string())
}

/// Commits the whole tree of a fresh repository and returns the commit id.
pub fn snapshot_commit(dir: &Path) -> Result<String, WorkspaceError> {
    run(dir, &["init", "-q"])?;
    run(dir, &["add", "-A"])?;
    run(dir, &["commit", "-q", "--allow-empty", "--no-verify", "-m", "base"])?;
    run_text(dir, &["rev-parse", "HEAD"])
}

/// Unified diff of the working tree against `rev`, new files included.
pub fn diff_against(dir: &Path, rev: &str) -> Result<Vec<u8>, WorkspaceError> {
    run(dir, &["add", "--intent-to-add", "--all", "."])?;
    run(
        dir,
        &[
            "diff",
            "--no-color",
            "--no-ext-diff",
            "--no-textconv",
            "--no-renames",
            "--src-prefix=a/",
            "--dst-prefix=b/",
            rev,
            "--",
        ],
    )
}
