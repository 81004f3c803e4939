//! Prompt templates with named interpolation slots.
//!
//! Templates live in TOML files (one per role) with a `system` and a `user`
//! key. Slots are written `{name}`; `{{` and `}}` produce literal braces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::model::AgentKind;

pub const SLOTS: [&str; 5] = ["issue_text", "test_output", "current_patch", "test_patch", "candidates"];

/// Rendered in place of a slot that has no value in the current stage.
pub const EMPTY_SLOT: &str = "(none)";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read prompt file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid prompt file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown slot {{{slot}}} in {context}")]
    UnknownSlot { slot: String, context: String },
    #[error("unterminated slot in {0}")]
    Unterminated(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(text: &str, context: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut lit = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => return Err(TemplateError::Unterminated(context.to_string())),
                        }
                    }
                    let slot = SLOTS.iter().find(|s| **s == name).ok_or_else(|| TemplateError::UnknownSlot {
                        slot: name.clone(),
                        context: context.to_string(),
                    })?;
                    if !lit.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut lit)));
                    }
                    pieces.push(Piece::Slot(slot));
                }
                other => lit.push(other),
            }
        }
        if !lit.is_empty() {
            pieces.push(Piece::Text(lit));
        }
        Ok(Template { pieces })
    }

    pub fn slots(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Text(_) => None,
        })
    }

    pub fn render(&self, inputs: &PromptInputs) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(inputs.get(s).unwrap_or(EMPTY_SLOT)),
            }
        }
        out
    }
}

/// Values for the template slots. Absent values render as [`EMPTY_SLOT`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptInputs {
    pub issue_text: String,
    pub test_output: Option<String>,
    pub current_patch: Option<String>,
    pub test_patch: Option<String>,
    pub candidates: Option<String>,
}

impl PromptInputs {
    pub fn get(&self, slot: &str) -> Option<&str> {
        match slot {
            "issue_text" => Some(&self.issue_text),
            "test_output" => self.test_output.as_deref(),
            "current_patch" => self.current_patch.as_deref(),
            "test_patch" => self.test_patch.as_deref(),
            "candidates" => self.candidates.as_deref(),
            _ => None,
        }
    }

    /// Every slot value concatenated, for leakage scans.
    pub fn all_text(&self) -> String {
        SLOTS.iter().filter_map(|s| self.get(s)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrompt {
    system: String,
    user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolePrompt {
    pub system: Template,
    pub user: Template,
}

impl RolePrompt {
    pub fn parse(text: &str, context: &str) -> Result<Self, TemplateError> {
        let raw: RawPrompt = toml::from_str(text).map_err(|e| TemplateError::Parse {
            path: PathBuf::from(context),
            message: e.to_string(),
        })?;
        Ok(RolePrompt {
            system: Template::parse(&raw.system, &format!("{context} (system)"))?,
            user: Template::parse(&raw.user, &format!("{context} (user)"))?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Prompts for all three roles, loaded from `<dir>/<role>.toml`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub test_generator: RolePrompt,
    pub code_generator: RolePrompt,
    pub selector: RolePrompt,
}

impl PromptSet {
    pub fn load(dir: &Path) -> Result<Self, TemplateError> {
        let load = |kind: AgentKind| RolePrompt::load(&dir.join(format!("{}.toml", kind.as_str())));
        Ok(PromptSet {
            test_generator: load(AgentKind::TestGenerator)?,
            code_generator: load(AgentKind::CodeGenerator)?,
            selector: load(AgentKind::Selector)?,
        })
    }

    pub fn get(&self, kind: AgentKind) -> &RolePrompt {
        match kind {
            AgentKind::TestGenerator => &self.test_generator,
            AgentKind::CodeGenerator => &self.code_generator,
            AgentKind::Selector => &self.selector,
        }
    }
}

/// The `prompts/` directory shipped at the repository root.
pub fn shipped_prompts_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts")
}
