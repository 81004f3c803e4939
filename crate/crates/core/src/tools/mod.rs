//! The agent-callable tool suite.
//!
//! Four tools are registered: `bash`, `editor`, `searcher` and `submitter`.
//! Every call goes through [`ToolSession::dispatch`], which validates the
//! arguments against the tool's schema, runs it against the session's
//! workspace and records exactly one [`ToolInvocation`]. Tool failures are
//! reported in-band (`success = false` with an [`ErrorCategory`]) and never
//! abort the calling agent.

pub mod editor;
pub mod search;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::gateway::ToolCall;
use crate::model::{ErrorCategory, ToolFailure, ToolInvocation, ToolName, ToolPayload};
use crate::workspace::{WorkspaceError, WorkspaceHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed: Vec<String>,
}

impl ParamSpec {
    fn new(name: &str, ty: ParamType, required: bool, description: &str) -> Self {
        ParamSpec {
            name: name.into(),
            ty,
            required,
            description: description.into(),
            allowed: Vec::new(),
        }
    }

    fn one_of(mut self, values: &[&str]) -> Self {
        self.allowed = values.iter().map(|v| v.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: ToolName,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSchema {
    /// JSON-schema function declaration for chat-completions `tools`.
    pub fn to_function_declaration(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.params {
            let mut prop = json!({
                "type": match p.ty { ParamType::String => "string", ParamType::Integer => "integer" },
                "description": p.description,
            });
            if !p.allowed.is_empty() {
                prop["enum"] = json!(p.allowed);
            }
            if p.ty == ParamType::Integer {
                prop["minimum"] = json!(0);
            }
            properties.insert(p.name.clone(), prop);
            if p.required {
                required.push(p.name.clone());
            }
        }
        json!({
            "type": "function",
            "function": {
                "name": self.name.as_str(),
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                    "additionalProperties": false,
                },
            },
        })
    }
}

/// The registered tool schemas, in a fixed order.
pub fn registry() -> Vec<ToolSchema> {
    use ParamType::*;
    vec![
        ToolSchema {
            name: ToolName::Bash,
            description: "Run a shell command in the repository root and return its exit code and output.".into(),
            params: vec![ParamSpec::new("command", String, true, "Shell command to run.")],
        },
        ToolSchema {
            name: ToolName::Editor,
            description: "Create files, view line ranges, insert lines, or replace a unique string in a file.".into(),
            params: vec![
                ParamSpec::new("subcommand", String, true, "One of create, view, insert, str_replace.")
                    .one_of(&["create", "view", "insert", "str_replace"]),
                ParamSpec::new("path", String, true, "Repository-relative file path."),
                ParamSpec::new("content", String, false, "File content (create) or lines to insert (insert)."),
                ParamSpec::new("start", Integer, false, "First line to view, 1-based."),
                ParamSpec::new("end", Integer, false, "Last line to view, clipped to the end of file."),
                ParamSpec::new("line", Integer, false, "Insert after this line; 0 inserts at the top."),
                ParamSpec::new("old_str", String, false, "Exact text to replace; must occur exactly once."),
                ParamSpec::new("new_str", String, false, "Replacement text."),
            ],
        },
        ToolSchema {
            name: ToolName::Searcher,
            description: "Search the repository for lines matching a regular expression.".into(),
            params: vec![
                ParamSpec::new("pattern", String, true, "Regular expression, matched per line."),
                ParamSpec::new("path_filter", String, false, "Glob restricting which files are searched."),
                ParamSpec::new("max_results", Integer, false, "Maximum matches to return (default 1000)."),
            ],
        },
        ToolSchema {
            name: ToolName::Submitter,
            description: "Submit the current changes as a unified diff against the original revision. Ends the run.".into(),
            params: vec![],
        },
    ]
}

/// Per-tool call and failure counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCounter {
    pub calls: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolStats {
    pub per_tool: BTreeMap<ToolName, ToolCounter>,
}

impl ToolStats {
    pub fn record(&mut self, inv: &ToolInvocation) {
        let c = self.per_tool.entry(inv.tool).or_default();
        c.calls += 1;
        if !inv.success {
            c.failures += 1;
        }
    }

    pub fn merge(&mut self, other: &ToolStats) {
        for (tool, c) in &other.per_tool {
            let mine = self.per_tool.entry(*tool).or_default();
            mine.calls += c.calls;
            mine.failures += c.failures;
        }
    }

    pub fn total_calls(&self) -> u64 {
        self.per_tool.values().map(|c| c.calls).sum()
    }

    pub fn get(&self, tool: ToolName) -> ToolCounter {
        self.per_tool.get(&tool).copied().unwrap_or_default()
    }

    pub fn from_invocations<'a>(invs: impl IntoIterator<Item = &'a ToolInvocation>) -> Self {
        let mut s = ToolStats::default();
        for inv in invs {
            s.record(inv);
        }
        s
    }
}

/// Tool execution state for one agent run.
pub struct ToolSession<'w> {
    ws: &'w mut WorkspaceHandle,
    submitted: Option<String>,
    stats: ToolStats,
    allowed: Vec<ToolName>,
}

struct Failure(ErrorCategory, String, ToolPayload);

impl Failure {
    fn new(category: ErrorCategory, detail: String) -> Self {
        Failure(category, detail, ToolPayload::None)
    }
}

type ToolResult = Result<(String, ToolPayload), Failure>;

fn ws_failure(e: WorkspaceError) -> Failure {
    match e {
        WorkspaceError::WorkspaceDead => Failure::new(ErrorCategory::WorkspaceDead, e.to_string()),
        WorkspaceError::PathEscape(_) => Failure::new(ErrorCategory::PathEscape, e.to_string()),
        other => Failure::new(ErrorCategory::Io, other.to_string()),
    }
}

fn validate(schema: &ToolSchema, args: &Value) -> Result<(), Failure> {
    let protocol = |msg: String| Failure::new(ErrorCategory::ProtocolError, msg);
    let obj = match args {
        Value::Object(o) => o,
        Value::Null if schema.params.iter().all(|p| !p.required) => return Ok(()),
        other => return Err(protocol(format!("arguments must be an object, got {other}"))),
    };
    for key in obj.keys() {
        if !schema.params.iter().any(|p| &p.name == key) {
            return Err(protocol(format!("unexpected field `{key}` for {}", schema.name)));
        }
    }
    for p in &schema.params {
        match obj.get(&p.name) {
            None | Some(Value::Null) if p.required => {
                return Err(protocol(format!("missing required field `{}` for {}", p.name, schema.name)))
            }
            None | Some(Value::Null) => {}
            Some(v) => {
                let ok = match p.ty {
                    ParamType::String => v.is_string(),
                    ParamType::Integer => v.as_u64().is_some(),
                };
                if !ok {
                    return Err(protocol(format!("field `{}` must be a {:?}", p.name, p.ty).to_lowercase()));
                }
                if !p.allowed.is_empty() && !p.allowed.iter().any(|a| v.as_str() == Some(a)) {
                    return Err(protocol(format!("field `{}` must be one of {}", p.name, p.allowed.join(", "))));
                }
            }
        }
    }
    Ok(())
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

fn int_arg(args: &Value, key: &str) -> Option<usize> {
    args.get(key).and_then(Value::as_u64).map(|v| v as usize)
}

fn require<'a>(args: &'a Value, key: &str, sub: &str) -> Result<&'a str, Failure> {
    str_arg(args, key).ok_or_else(|| Failure::new(ErrorCategory::ProtocolError, format!("missing required field `{key}` for editor {sub}")))
}

impl<'w> ToolSession<'w> {
    pub fn new(ws: &'w mut WorkspaceHandle) -> Self {
        Self::restricted(ws, &ToolName::REGISTERED)
    }

    /// A session in which only `allowed` tools may be called.
    pub fn restricted(ws: &'w mut WorkspaceHandle, allowed: &[ToolName]) -> Self {
        ToolSession {
            ws,
            submitted: None,
            stats: ToolStats::default(),
            allowed: allowed.to_vec(),
        }
    }

    /// Schemas of the tools callable in this session.
    pub fn schemas(&self) -> Vec<ToolSchema> {
        registry().into_iter().filter(|s| self.allowed.contains(&s.name)).collect()
    }

    /// Diff text handed in by the submitter, once it has been called.
    pub fn submitted(&self) -> Option<&str> {
        self.submitted.as_deref()
    }

    pub fn stats(&self) -> &ToolStats {
        &self.stats
    }

    pub fn workspace(&mut self) -> &mut WorkspaceHandle {
        self.ws
    }

    /// Validates and routes one call. Always yields exactly one invocation record.
    pub fn dispatch(&mut self, call: &ToolCall) -> ToolInvocation {
        let start = Instant::now();
        let tool = ToolName::from_name(&call.name).unwrap_or(ToolName::Unknown);
        let result = match registry().into_iter().find(|s| s.name == tool) {
            None => Err(Failure::new(ErrorCategory::ProtocolError, format!("unknown tool `{}`", call.name))),
            Some(_) if !self.allowed.contains(&tool) => Err(Failure::new(
                ErrorCategory::ProtocolError,
                format!("tool `{}` is not available to this agent", call.name),
            )),
            Some(schema) => validate(&schema, &call.arguments).and_then(|()| self.route(tool, &call.arguments)),
        };
        let (output, payload, failure) = match result {
            Ok((output, payload)) => (output, payload, None),
            Err(Failure(category, detail, payload)) => (
                format!("error ({category:?}): {detail}"),
                payload,
                Some(ToolFailure { category, detail }),
            ),
        };
        let inv = ToolInvocation {
            call_id: call.id.clone(),
            tool,
            args: call.arguments.clone(),
            output,
            payload,
            success: failure.is_none(),
            failure,
            duration_secs: start.elapsed().as_secs_f64(),
        };
        self.stats.record(&inv);
        inv
    }

    fn route(&mut self, tool: ToolName, args: &Value) -> ToolResult {
        match tool {
            ToolName::Bash => self.bash(str_arg(args, "command").unwrap_or_default()),
            ToolName::Editor => self.editor(args),
            ToolName::Searcher => self.search(
                str_arg(args, "pattern").unwrap_or_default(),
                str_arg(args, "path_filter"),
                int_arg(args, "max_results"),
            ),
            ToolName::Submitter => self.submit(),
            ToolName::Unknown => Err(Failure::new(ErrorCategory::ProtocolError, "unknown tool".into())),
        }
    }

    fn bash(&mut self, command: &str) -> ToolResult {
        if command.trim().is_empty() {
            return Err(Failure::new(ErrorCategory::ProtocolError, "command must be non-empty".into()));
        }
        let r = self.ws.exec_default(command).map_err(ws_failure)?;
        let mut text = format!("exit_code: {}\n", r.exit_code);
        if r.timed_out {
            text.push_str(&format!("timed out after {:.1}s\n", r.duration_secs));
        }
        if !r.stdout.is_empty() {
            text.push_str("--- stdout ---\n");
            text.push_str(&r.stdout);
        }
        if !r.stderr.is_empty() {
            if !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str("--- stderr ---\n");
            text.push_str(&r.stderr);
        }
        let payload = ToolPayload::Exec {
            exit_code: r.exit_code,
            timed_out: r.timed_out,
        };
        if r.timed_out {
            return Err(Failure(ErrorCategory::Timeout, text, payload));
        }
        if r.exit_code != 0 {
            return Err(Failure(ErrorCategory::NonZeroExit, text, payload));
        }
        Ok((text, payload))
    }

    fn editor(&mut self, args: &Value) -> ToolResult {
        let sub = str_arg(args, "subcommand").unwrap_or_default();
        let rel = str_arg(args, "path").unwrap_or_default();
        let path = self.ws.resolve(rel).map_err(ws_failure)?;
        let out = match sub {
            "create" => editor::create(&path, rel, require(args, "content", sub)?),
            "view" => editor::view(&path, rel, int_arg(args, "start"), int_arg(args, "end")),
            "insert" => {
                let line = int_arg(args, "line").ok_or_else(|| {
                    Failure::new(ErrorCategory::ProtocolError, "missing required field `line` for editor insert".into())
                })?;
                editor::insert(&path, rel, line, require(args, "content", sub)?)
            }
            "str_replace" => editor::str_replace(&path, rel, require(args, "old_str", sub)?, str_arg(args, "new_str").unwrap_or_default()),
            other => return Err(Failure::new(ErrorCategory::ProtocolError, format!("unknown editor subcommand `{other}`"))),
        };
        out.map(|text| (text, ToolPayload::None))
            .map_err(|e| Failure::new(e.category, e.detail))
    }

    fn search(&mut self, pattern: &str, filter: Option<&str>, max: Option<usize>) -> ToolResult {
        let query = search::Query::new(pattern, filter, max).map_err(|e| match e {
            search::SearchError::BadPattern(m) => Failure::new(ErrorCategory::BadPattern, m),
            search::SearchError::BadFilter(m) => Failure::new(ErrorCategory::ProtocolError, m),
        })?;
        if !self.ws.is_live() {
            return Err(ws_failure(WorkspaceError::WorkspaceDead));
        }
        let out = search::search(self.ws.root(), &query);
        let mut text = String::new();
        for m in &out.matches {
            text.push_str(&format!("{}:{}:{}\n", m.path, m.line_number, m.line_text));
        }
        if out.matches.is_empty() {
            text.push_str("no matches\n");
        }
        if out.truncated {
            text.push_str(&format!("[results truncated at {} matches]\n", out.matches.len()));
        }
        Ok((
            text,
            ToolPayload::Search {
                matches: out.matches,
                truncated: out.truncated,
            },
        ))
    }

    fn submit(&mut self) -> ToolResult {
        let diff = self.ws.extract_diff().map_err(ws_failure)?;
        self.submitted = Some(diff.clone());
        let text = if diff.is_empty() { "submitted an empty diff\n".to_string() } else { diff.clone() };
        Ok((text, ToolPayload::Diff { diff_text: diff }))
    }
}
