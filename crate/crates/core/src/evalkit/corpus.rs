//! Fixture corpus manifests.
//!
//! ```text
//! corpus.toml                 version + [[task]] entries (id, dir)
//! <dir>/task.toml             base_revision, hidden test lists, [env]
//! <dir>/issue.md              issue text shown to agents
//! <dir>/repo/                 repository (plain snapshot or git checkout)
//! <dir>/hidden_tests.patch    installs the hidden tests at evaluation time
//! <dir>/reference.patch       known-good fix
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::model::{EnvSpec, IssueTask};
use crate::workspace;

pub const MANIFEST_NAME: &str = "corpus.toml";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid corpus manifest {path}:\n  {}", diagnostics.join("\n  "))]
pub struct ManifestInvalid {
    pub path: PathBuf,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    version: String,
    #[serde(default, rename = "task")]
    tasks: Vec<RawEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    /// Defaults to the id.
    dir: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    base_revision: String,
    #[serde(default = "default_issue")]
    issue: String,
    #[serde(default = "default_repo")]
    repo: String,
    #[serde(default)]
    hidden_fail_to_pass: Vec<String>,
    #[serde(default)]
    hidden_pass_to_pass: Vec<String>,
    hidden_test_patch: Option<String>,
    reference_patch: Option<String>,
    env: EnvSpec,
}

fn default_issue() -> String {
    "issue.md".into()
}

fn default_repo() -> String {
    "repo".into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusTask {
    pub task: IssueTask,
    pub dir: PathBuf,
    pub reference_patch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub path: PathBuf,
    pub version: String,
    pub tasks: Vec<CorpusTask>,
}

impl CorpusManifest {
    pub fn get(&self, id: &str) -> Option<&CorpusTask> {
        self.tasks.iter().find(|t| t.task.task_id == id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Loads and validates a manifest. `path` is the manifest file or the
/// directory holding `corpus.toml`.
pub fn load_corpus(path: &Path) -> Result<CorpusManifest, ManifestInvalid> {
    let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let invalid = |diagnostics: Vec<String>| ManifestInvalid {
        path: file.clone(),
        diagnostics,
    };
    let text = fs::read_to_string(&file).map_err(|e| invalid(vec![format!("cannot read manifest: {e}")]))?;
    let raw: RawManifest = toml::from_str(&text).map_err(|e| invalid(vec![e.to_string()]))?;
    let root = file.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut diagnostics = Vec::new();
    if raw.tasks.is_empty() {
        diagnostics.push("task: the corpus lists no tasks".to_string());
    }
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for (i, entry) in raw.tasks.iter().enumerate() {
        if entry.id.trim().is_empty() {
            diagnostics.push(format!("task[{i}].id: must be non-empty"));
            continue;
        }
        if !seen.insert(entry.id.clone()) {
            diagnostics.push(format!("task[{i}].id: duplicate task id `{}`", entry.id));
            continue;
        }
        let dir = root.join(entry.dir.as_deref().unwrap_or(&entry.id));
        match load_task(&entry.id, &dir) {
            Ok(t) => tasks.push(t),
            Err(errs) => diagnostics.extend(errs.into_iter().map(|e| format!("task[{i}] ({}): {e}", entry.id))),
        }
    }
    if !diagnostics.is_empty() {
        return Err(invalid(diagnostics));
    }
    Ok(CorpusManifest {
        path: file.clone(),
        version: raw.version,
        tasks,
    })
}

/// Loads one task directory outside any manifest; the id is the directory name.
pub fn load_task_dir(dir: &Path) -> Result<CorpusTask, ManifestInvalid> {
    let id = dir
        .canonicalize()
        .ok()
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    load_task(&id, dir).map_err(|diagnostics| ManifestInvalid {
        path: dir.join("task.toml"),
        diagnostics,
    })
}

fn load_task(id: &str, dir: &Path) -> Result<CorpusTask, Vec<String>> {
    let task_file = dir.join("task.toml");
    let text = fs::read_to_string(&task_file).map_err(|e| vec![format!("{}: {e}", task_file.display())])?;
    let raw: RawTask = toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", task_file.display())])?;

    let mut errs = Vec::new();
    let repo_root = dir.join(&raw.repo);
    if !repo_root.is_dir() {
        errs.push(format!("repo: {} does not exist", repo_root.display()));
    } else {
        match workspace::revision_exists(&repo_root, &raw.base_revision) {
            Ok(true) => {}
            Ok(false) => errs.push(format!("base_revision: {} not found in {}", raw.base_revision, repo_root.display())),
            Err(e) => errs.push(format!("base_revision: {e}")),
        }
    }
    let read = |field: &str, name: &str, errs: &mut Vec<String>| -> Option<String> {
        match fs::read_to_string(dir.join(name)) {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("{field}: {}: {e}", dir.join(name).display()));
                None
            }
        }
    };
    let issue_text = read("issue", &raw.issue, &mut errs).unwrap_or_default();
    let hidden_name = raw
        .hidden_test_patch
        .clone()
        .or_else(|| dir.join("hidden_tests.patch").is_file().then(|| "hidden_tests.patch".to_string()));
    let hidden_test_patch = hidden_name.and_then(|n| read("hidden_test_patch", &n, &mut errs));
    let reference_name = raw
        .reference_patch
        .clone()
        .or_else(|| dir.join("reference.patch").is_file().then(|| "reference.patch".to_string()));
    let reference_patch = reference_name.and_then(|n| read("reference_patch", &n, &mut errs));
    if raw.hidden_fail_to_pass.is_empty() {
        errs.push("hidden_fail_to_pass: must list at least one test".into());
    }
    if !raw.env.test_command.contains("{test}") {
        errs.push("env.test_command: must contain the {test} slot".into());
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(CorpusTask {
        task: IssueTask {
            task_id: id.to_string(),
            repo_root,
            base_revision: raw.base_revision,
            issue_text,
            env_spec: raw.env,
            hidden_fail_to_pass: raw.hidden_fail_to_pass,
            hidden_pass_to_pass: raw.hidden_pass_to_pass,
            hidden_test_patch,
        },
        dir: dir.to_path_buf(),
        reference_patch,
    })
}

/// The fixture corpus shipped at the repository root.
pub fn shipped_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}
