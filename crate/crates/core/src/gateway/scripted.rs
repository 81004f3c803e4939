//! Deterministic replay backend.
//!
//! A script is a TOML file listing assistant turns, each tagged with the
//! agent role that receives it. Turns are handed out positionally per
//! (task, role): the n-th query from a role gets that role's n-th turn,
//! whatever the conversation looks like.
//!
//! ```toml
//! task = "t1-leap-year"
//!
//! [[turn]]
//! role = "test_generator"
//! content = "Reproduce the century bug."
//! [[turn.tool_calls]]
//! name = "editor"
//! arguments = { subcommand = "create", path = "tests/test_repro.py", content = "..." }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{word_count, ChatBackend, ChatReply, ChatRequest, ChatTurn, GatewayError, ToolCall, Usage};
use crate::model::AgentKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptToolCall {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptTurn {
    pub role: AgentKind,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub tool_calls: Vec<ScriptToolCall>,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    /// Task the script belongs to. Scripts loaded from a directory default
    /// to the file stem.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default, rename = "turn")]
    pub turns: Vec<ScriptTurn>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid script {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("two scripts claim task {0}")]
    DuplicateTask(String),
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| ScriptError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn turns_for(&self, role: AgentKind) -> impl Iterator<Item = &ScriptTurn> {
        self.turns.iter().filter(move |t| t.role == role)
    }
}

/// Replays scripts; safe for concurrent use from parallel tasks.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    scripts: HashMap<String, Script>,
    /// Used for tasks without a script of their own.
    fallback: Option<Script>,
    cursors: Mutex<HashMap<(String, AgentKind), usize>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// A backend that plays `script` for every task.
    pub fn single(script: Script) -> Self {
        let mut b = Self::new();
        match script.task.clone() {
            Some(task) => {
                b.scripts.insert(task, script);
            }
            None => b.fallback = Some(script),
        }
        b
    }

    pub fn with_script(mut self, task_id: impl Into<String>, script: Script) -> Self {
        self.scripts.insert(task_id.into(), script);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        Ok(Self::single(Script::load(path)?))
    }

    /// Loads every `*.toml` in `dir`, keyed by its `task` field or file stem.
    pub fn from_dir(dir: &Path) -> Result<Self, ScriptError> {
        let io = |source| ScriptError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        entries.sort();
        let mut backend = Self::new();
        for path in entries {
            let script = Script::load(&path)?;
            let task = script
                .task
                .clone()
                .unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
            if backend.scripts.contains_key(&task) {
                return Err(ScriptError::DuplicateTask(task));
            }
            backend.scripts.insert(task, script);
        }
        Ok(backend)
    }

    pub fn has_task(&self, task_id: &str) -> bool {
        self.scripts.contains_key(task_id) || self.fallback.is_some()
    }

    /// Resets all cursors so the scripts replay from the start.
    pub fn rewind(&self) {
        self.cursors.lock().expect("cursor lock").clear();
    }
}

fn history_words(history: &[ChatTurn]) -> u64 {
    history
        .iter()
        .map(|t| {
            word_count(&t.content)
                + t.tool_calls
                    .iter()
                    .map(|c| word_count(&c.name) + word_count(&c.arguments.to_string()))
                    .sum::<u64>()
        })
        .sum()
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<ChatReply, GatewayError> {
        let exhausted = || GatewayError::ScriptExhausted {
            task_id: req.task_id.to_string(),
            role: req.role,
        };
        let script = self
            .scripts
            .get(req.task_id)
            .or(self.fallback.as_ref())
            .ok_or_else(exhausted)?;
        let index = {
            let mut cursors = self.cursors.lock().expect("cursor lock");
            let cursor = cursors.entry((req.task_id.to_string(), req.role)).or_insert(0);
            let i = *cursor;
            *cursor += 1;
            i
        };
        let turn = script.turns_for(req.role).nth(index).ok_or_else(exhausted)?;
        let tool_calls: Vec<ToolCall> = turn
            .tool_calls
            .iter()
            .enumerate()
            .map(|(i, c)| ToolCall {
                id: c.id.clone().unwrap_or_else(|| format!("{}-{index}-{i}", req.role)),
                name: c.name.clone(),
                arguments: c.arguments.clone(),
            })
            .collect();
        let completion_words = word_count(&turn.content)
            + tool_calls
                .iter()
                .map(|c| word_count(&c.name) + word_count(&c.arguments.to_string()))
                .sum::<u64>();
        let usage = Usage {
            prompt_tokens: turn.prompt_tokens.unwrap_or_else(|| history_words(req.history)),
            completion_tokens: turn.completion_tokens.unwrap_or(completion_words),
        };
        Ok(ChatReply {
            turn: ChatTurn::assistant(turn.content.clone(), tool_calls),
            usage,
        })
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = r#"
task = "t1"

[[turn]]
role = "code_generator"
content = "fixing"
prompt_tokens = 10
completion_tokens = 5
[[turn.tool_calls]]
name = "bash"
arguments = { command = "ls" }

[[turn]]
role = "test_generator"
content = "one two three"
"#;

    fn req<'a>(task: &'a str, role: AgentKind, history: &'a [ChatTurn]) -> ChatRequest<'a> {
        ChatRequest {
            task_id: task,
            role,
            history,
            tools: &[],
        }
    }

    #[test]
    fn replays_turns_verbatim_then_exhausts() {
        let b = ScriptedBackend::single(Script::parse(SCRIPT).unwrap());
        let history = [ChatTurn::system("sys"), ChatTurn::user("a b")];
        let r = b.complete(&req("t1", AgentKind::CodeGenerator, &history)).unwrap();
        assert_eq!(r.turn.content, "fixing");
        assert_eq!(r.turn.tool_calls.len(), 1);
        assert_eq!(r.turn.tool_calls[0].arguments["command"], "ls");
        assert_eq!(r.usage, Usage { prompt_tokens: 10, completion_tokens: 5 });
        assert!(matches!(
            b.complete(&req("t1", AgentKind::CodeGenerator, &history)),
            Err(GatewayError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn cursors_are_per_role_and_task() {
        let b = ScriptedBackend::new().with_script("t1", Script::parse(SCRIPT).unwrap());
        let history = [ChatTurn::system("sys"), ChatTurn::user("a b")];
        let t = b.complete(&req("t1", AgentKind::TestGenerator, &history)).unwrap();
        assert_eq!(t.turn.content, "one two three");
        // Word-count defaults: 3 history words, 3 content words.
        assert_eq!(t.usage, Usage { prompt_tokens: 3, completion_tokens: 3 });
        assert!(b.complete(&req("t1", AgentKind::CodeGenerator, &history)).is_ok());
        assert!(b.complete(&req("t2", AgentKind::CodeGenerator, &history)).is_err());
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let b = ScriptedBackend::single(Script::parse(SCRIPT).unwrap());
            let history = [ChatTurn::system("sys")];
            let mut out = Vec::new();
            for role in [AgentKind::CodeGenerator, AgentKind::TestGenerator, AgentKind::Selector] {
                out.push(format!("{:?}", b.complete(&req("t1", role, &history))));
            }
            out
        };
        assert_eq!(run(), run());
    }
}
