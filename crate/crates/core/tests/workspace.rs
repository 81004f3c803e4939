mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cofix_core::model::{EnvSpec, PublicTask};
use cofix_core::workspace::{self, Isolation, SandboxConfig, WorkspaceError, WorkspaceHandle, KILL_EXIT_CODE};
use cofix_core::{Patch, PatchKind, Producer};

fn open(id: &str) -> WorkspaceHandle {
    WorkspaceHandle::create(&common::task(id).public(), &common::sandbox()).unwrap()
}

fn public(repo: &Path, revision: &str) -> PublicTask {
    PublicTask {
        task_id: "scratch".into(),
        repo_root: repo.to_path_buf(),
        base_revision: revision.into(),
        issue_text: String::new(),
        env_spec: EnvSpec {
            install: Vec::new(),
            test_command: "sh {test}".into(),
            regression_tests: Vec::new(),
            image: None,
            timeout_secs: None,
        },
    }
}

fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .current_dir(dir)
        .args(["-c", "user.name=t", "-c", "user.email=t@example.com", "-c", "commit.gpgsign=false"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

#[test]
fn snapshot_checkout_is_deterministic() {
    let task = common::task("t1-leap-year");
    let a = open("t1-leap-year");
    let b = open("t1-leap-year");
    assert_eq!(a.clean_revision(), task.base_revision);
    assert_eq!(a.tree_digest().unwrap(), b.tree_digest().unwrap());
    assert_ne!(a.root(), b.root());
    assert_eq!(workspace::snapshot_revision(&task.repo_root).unwrap(), task.base_revision);
}

#[test]
fn exec_basics() {
    let mut ws = open("t1-leap-year");
    let r = ws.exec_default("echo hi").unwrap();
    assert_eq!((r.exit_code, r.stdout.as_str(), r.timed_out), (0, "hi\n", false));
    let r = ws.exec_default("exit 3").unwrap();
    assert_eq!(r.exit_code, 3);
    assert!(!r.success());
    let r = ws.exec_default("no_such_cmd_xyz").unwrap();
    assert_ne!(r.exit_code, 0);
    let r = ws.exec_default("pwd").unwrap();
    assert_eq!(Path::new(r.stdout.trim()), ws.root().canonicalize().unwrap());
}

#[test]
fn exec_timeout_kills_process_group() {
    let mut ws = open("t1-leap-year");
    let start = Instant::now();
    let r = ws.exec("sleep 30 & sleep 30; echo never", Duration::from_millis(300)).unwrap();
    assert!(r.timed_out);
    assert_eq!(r.exit_code, KILL_EXIT_CODE);
    assert!(r.duration_secs >= 0.3);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(!r.stdout.contains("never"));
}

#[test]
fn exec_output_is_capped() {
    let cfg = SandboxConfig {
        output_cap: 1024,
        ..SandboxConfig::default()
    };
    let mut ws = WorkspaceHandle::create(&common::task("t1-leap-year").public(), &cfg).unwrap();
    let r = ws.exec_default("yes x | head -c 100000").unwrap();
    assert_eq!(r.exit_code, 0);
    assert!(r.stdout.len() <= 1024 + 64, "{}", r.stdout.len());
    assert!(r.stdout.starts_with("x\nx\n"));
}

#[test]
fn failing_fixture_test_reports_its_message() {
    let task = common::task("t3-port-exception");
    let mut ws = WorkspaceHandle::create(&task.public(), &common::sandbox()).unwrap();
    ws.apply_diff(&cofix_core::parse_diff(task.hidden_test_patch.as_deref().unwrap()).unwrap()).unwrap();
    let r = ws.exec_default(&task.env_spec.test_invocation(&task.hidden_fail_to_pass[0])).unwrap();
    assert_eq!(r.exit_code, 1);
    assert!(r.combined().contains("FAIL: "), "{}", r.combined());
}

#[test]
fn edit_extract_apply_round_trip() {
    let mut edited = open("t4-missing-slug");
    let base = edited.tree_digest().unwrap();
    let root = edited.root().to_path_buf();
    fs::write(root.join("textkit/slug.py"), "def slugify(s):\n    return s\n").unwrap();
    let wrap = fs::read_to_string(root.join("textkit/wrap.py")).unwrap();
    fs::write(root.join("textkit/wrap.py"), wrap.replacen('\n', "\n# edited\n", 1)).unwrap();
    fs::remove_file(root.join("textkit/__init__.py")).unwrap();
    let diff = edited.extract_diff().unwrap();
    let target = edited.tree_digest().unwrap();
    assert_ne!(base, target);

    let mut fresh = open("t4-missing-slug");
    let patch = Patch::new(PatchKind::Code, diff.clone(), Producer::CodeGenerator, 0).unwrap();
    fresh.apply_patch(&patch).unwrap();
    assert_eq!(fresh.tree_digest().unwrap(), target);
    assert_eq!(fresh.extract_diff().unwrap(), diff);

    edited.reset().unwrap();
    assert_eq!(edited.tree_digest().unwrap(), base);
    assert_eq!(edited.extract_diff().unwrap(), "");
}

#[test]
fn reset_removes_ignored_and_untracked_files() {
    let mut ws = open("t1-leap-year");
    let base = ws.tree_digest().unwrap();
    fs::create_dir_all(ws.root().join("__pycache__")).unwrap();
    fs::write(ws.root().join("__pycache__/x.pyc"), b"\0").unwrap();
    fs::write(ws.root().join("scratch.txt"), "x").unwrap();
    ws.reset().unwrap();
    assert_eq!(ws.tree_digest().unwrap(), base);
}

#[test]
fn conflicting_patch_leaves_tree_untouched() {
    let mut ws = open("t1-leap-year");
    let base = ws.tree_digest().unwrap();
    let bad = "diff --git a/new.txt b/new.txt\nnew file mode 100644\n--- /dev/null\n+++ b/new.txt\n@@ -0,0 +1 @@\n+hello\n\
diff --git a/datekit/calendar.py b/datekit/calendar.py\n--- a/datekit/calendar.py\n+++ b/datekit/calendar.py\n@@ -1,1 +1,1 @@\n-this line is not there\n+replacement\n";
    let err = ws.apply_diff(&cofix_core::parse_diff(bad).unwrap()).unwrap_err();
    assert!(matches!(err, WorkspaceError::PatchConflict { ref path, .. } if path == "datekit/calendar.py"), "{err}");
    assert_eq!(ws.tree_digest().unwrap(), base);
    assert!(!ws.root().join("new.txt").exists());
}

#[test]
fn paths_cannot_escape() {
    let ws = open("t1-leap-year");
    for p in ["../outside", "/etc/passwd", "a/../../x", ".git/config"] {
        assert!(matches!(ws.resolve(p), Err(WorkspaceError::PathEscape(_))), "{p}");
    }
    assert!(ws.resolve("datekit/../datekit/calendar.py").is_ok());
    let escape = "diff --git a/../evil b/../evil\nnew file mode 100644\n--- /dev/null\n+++ b/../evil\n@@ -0,0 +1 @@\n+x\n";
    if let Ok(d) = cofix_core::parse_diff(escape) {
        let mut ws = ws;
        assert!(ws.apply_diff(&d).is_err());
    }
}

#[test]
fn disposed_workspace_is_dead() {
    let mut ws = open("t1-leap-year");
    let root = ws.root().to_path_buf();
    ws.dispose();
    assert!(!root.exists());
    assert!(matches!(ws.exec_default("true"), Err(WorkspaceError::WorkspaceDead)));
    assert!(matches!(ws.reset(), Err(WorkspaceError::WorkspaceDead)));
    assert!(matches!(ws.extract_diff(), Err(WorkspaceError::WorkspaceDead)));
    ws.dispose();
}

#[test]
fn git_source_is_cloned_at_revision() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = tmp.path().join("src");
    fs::create_dir_all(&repo).unwrap();
    git(&repo, &["init", "-q"]);
    fs::write(repo.join("a.txt"), "one\n").unwrap();
    git(&repo, &["add", "."]);
    git(&repo, &["commit", "-q", "-m", "one"]);
    let first = git(&repo, &["rev-parse", "HEAD"]);
    fs::write(repo.join("a.txt"), "two\n").unwrap();
    git(&repo, &["commit", "-q", "-am", "two"]);

    let mut ws = WorkspaceHandle::create(&public(&repo, &first[..7]), &common::sandbox()).unwrap();
    assert_eq!(ws.clean_revision(), first);
    assert_eq!(fs::read_to_string(ws.root().join("a.txt")).unwrap(), "one\n");
    fs::write(ws.root().join("a.txt"), "three\n").unwrap();
    assert!(ws.extract_diff().unwrap().contains("+three"));
    ws.reset().unwrap();
    assert_eq!(fs::read_to_string(ws.root().join("a.txt")).unwrap(), "one\n");
    // The source repository is never touched.
    assert_eq!(fs::read_to_string(repo.join("a.txt")).unwrap(), "two\n");
    assert!(workspace::revision_exists(&repo, &first).unwrap());
    assert!(!workspace::revision_exists(&repo, "0000000000").unwrap());
}

#[test]
fn creation_errors() {
    let missing = WorkspaceHandle::create(&public(Path::new("/nonexistent/repo"), "abcdef0"), &common::sandbox());
    assert!(matches!(missing, Err(WorkspaceError::RepoNotFound(_))));

    let repo = common::task("t1-leap-year").repo_root;
    let wrong = WorkspaceHandle::create(&public(&repo, "deadbeefdeadbeef"), &common::sandbox());
    assert!(matches!(wrong, Err(WorkspaceError::RevisionNotFound { .. })));
    let short = WorkspaceHandle::create(&public(&repo, "ab"), &common::sandbox());
    assert!(matches!(short, Err(WorkspaceError::RevisionNotFound { .. })));

    let mut task = common::task("t1-leap-year").public();
    task.env_spec.install = vec!["true".into(), "echo broken >&2; exit 4".into()];
    match WorkspaceHandle::create(&task, &common::sandbox()) {
        Err(WorkspaceError::EnvBuildFailed { exit_code, stderr, .. }) => {
            assert_eq!(exit_code, 4);
            assert!(stderr.contains("broken"));
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn install_commands_run_in_the_checkout() {
    let mut task = common::task("t1-leap-year").public();
    task.env_spec.install = vec!["echo built > build.marker".into()];
    let mut ws = WorkspaceHandle::create(&task, &common::sandbox()).unwrap();
    assert!(ws.root().join("build.marker").is_file());
    assert_eq!(ws.exec_default("cat build.marker").unwrap().stdout, "built\n");
}

#[test]
fn task_timeout_overrides_default() {
    let ws = open("t1-leap-year");
    assert_eq!(ws.default_timeout(), Duration::from_secs(60));
    let mut task = common::task("t1-leap-year").public();
    task.env_spec.timeout_secs = None;
    let ws = WorkspaceHandle::create(&task, &common::sandbox()).unwrap();
    assert_eq!(ws.default_timeout(), workspace::DEFAULT_TIMEOUT);
}

#[test]
fn container_backend() {
    if !workspace::container_backend_available("docker") {
        eprintln!("docker not available; skipping container backend test");
        return;
    }
    let cfg = SandboxConfig {
        isolation: Isolation::Container,
        image_template: Some("python:3-slim".into()),
        ..SandboxConfig::default()
    };
    let mut ws = WorkspaceHandle::create(&common::task("t1-leap-year").public(), &cfg).unwrap();
    assert_eq!(ws.exec_default("echo hi").unwrap().stdout, "hi\n");
    assert_eq!(ws.exec_default("pwd").unwrap().stdout, "/workspace\n");
    ws.dispose();
}

#[test]
fn container_backend_without_image_is_unavailable() {
    let cfg = SandboxConfig {
        isolation: Isolation::Container,
        docker_bin: "/nonexistent/docker".into(),
        ..SandboxConfig::default()
    };
    let r = WorkspaceHandle::create(&common::task("t1-leap-year").public(), &cfg);
    assert!(matches!(r, Err(WorkspaceError::BackendUnavailable(_))));
}
