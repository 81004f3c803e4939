//! Backend-agnostic chat interface with function calling and cost accounting.

mod live;
mod scripted;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::model::AgentKind;
use crate::tools::ToolSchema;

pub use live::{HttpResponse, LiveBackend, LiveConfig, Transport, UreqTransport};
pub use scripted::{Script, ScriptError, ScriptToolCall, ScriptTurn, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        ChatTurn {
            role: ChatRole::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatTurn {
            role: ChatRole::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: ChatRole, content: impl Into<String>) -> Self {
        ChatTurn {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

/// USD prices per thousand tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PricingConfig {
    #[serde(with = "rust_decimal::serde::str")]
    pub prompt_price_per_1k: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub completion_price_per_1k: Decimal,
}

impl PricingConfig {
    pub fn new(prompt_price_per_1k: Decimal, completion_price_per_1k: Decimal) -> Result<Self, GatewayError> {
        if prompt_price_per_1k.is_sign_negative() || completion_price_per_1k.is_sign_negative() {
            return Err(GatewayError::InvalidRequest("prices must be non-negative".into()));
        }
        Ok(PricingConfig {
            prompt_price_per_1k,
            completion_price_per_1k,
        })
    }
}

/// Exact decimal cost of one exchange.
pub fn accrue_cost(usage: Usage, pricing: &PricingConfig) -> Decimal {
    let thousand = Decimal::from(1000u32);
    Decimal::from(usage.prompt_tokens) / thousand * pricing.prompt_price_per_1k
        + Decimal::from(usage.completion_tokens) / thousand * pricing.completion_price_per_1k
}

#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    /// Routing keys for backends that keep per-task, per-role state.
    pub task_id: &'a str,
    pub role: AgentKind,
    pub history: &'a [ChatTurn],
    pub tools: &'a [ToolSchema],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub turn: ChatTurn,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {detail}")]
    BackendUnavailable { attempts: u32, detail: String },
    #[error("context overflow: {0}")]
    ContextOverflow(String),
    #[error("script exhausted for task {task_id}, role {role}")]
    ScriptExhausted { task_id: String, role: AgentKind },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<ChatReply, GatewayError>;

    fn name(&self) -> &'static str;
}

/// Validates requests and replies around a backend and prices each exchange.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    pricing: PricingConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("pricing", &self.pricing)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>, pricing: PricingConfig) -> Self {
        Gateway { backend, pricing }
    }

    pub fn pricing(&self) -> &PricingConfig {
        &self.pricing
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    /// One assistant turn for the given history, with its usage and cost.
    pub fn chat(&self, req: &ChatRequest<'_>) -> Result<(ChatReply, Decimal), GatewayError> {
        match req.history.first() {
            Some(t) if t.role == ChatRole::System => {}
            Some(_) => return Err(GatewayError::InvalidRequest("first turn must be the system prompt".into())),
            None => return Err(GatewayError::InvalidRequest("history is empty".into())),
        }
        let mut open_calls: Vec<&str> = Vec::new();
        for turn in req.history {
            if turn.role != ChatRole::Assistant && !turn.tool_calls.is_empty() {
                return Err(GatewayError::InvalidRequest("tool calls on a non-assistant turn".into()));
            }
            match turn.role {
                ChatRole::Assistant => open_calls.extend(turn.tool_calls.iter().map(|c| c.id.as_str())),
                ChatRole::Tool => {
                    let id = turn.tool_call_id.as_deref().unwrap_or_default();
                    if !open_calls.contains(&id) {
                        return Err(GatewayError::InvalidRequest(format!("tool turn references unknown call {id:?}")));
                    }
                }
                _ => {}
            }
        }
        let reply = self.backend.complete(req)?;
        if reply.turn.role != ChatRole::Assistant {
            return Err(GatewayError::Protocol(format!("backend replied with a {:?} turn", reply.turn.role)));
        }
        let cost = accrue_cost(reply.usage, &self.pricing);
        Ok((reply, cost))
    }
}

/// Whitespace-separated word count, the scripted backend's token estimate.
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
