//! HTTP chat-completions backend with function calling.

use std::sync::atomic::{AtomicU32, Ordering};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatReply, ChatRequest, ChatRole, ChatTurn, GatewayError, ToolCall, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON POST. `Err` means the request never produced a response.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt for transient failures.
    pub retry_limit: u32,
    pub backoff_base: Duration,
    pub request_timeout: Duration,
    pub seed: Option<u64>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key: None,
            retry_limit: 3,
            backoff_base: Duration::from_millis(500),
            request_timeout: Duration::from_secs(300),
            seed: None,
        }
    }
}

pub struct LiveBackend<T: Transport = UreqTransport> {
    cfg: LiveConfig,
    transport: T,
    attempts: AtomicU32,
}

impl LiveBackend<UreqTransport> {
    pub fn new(cfg: LiveConfig) -> Self {
        let transport = UreqTransport::new(cfg.request_timeout);
        Self::with_transport(cfg, transport)
    }
}

impl<T: Transport> LiveBackend<T> {
    pub fn with_transport(cfg: LiveConfig, transport: T) -> Self {
        LiveBackend {
            cfg,
            transport,
            attempts: AtomicU32::new(0),
        }
    }

    /// Total HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn request_body(&self, req: &ChatRequest<'_>) -> Value {
        let messages: Vec<Value> = req.history.iter().map(encode_turn).collect();
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
        });
        if !req.tools.is_empty() {
            body["tools"] = Value::Array(req.tools.iter().map(|t| t.to_function_declaration()).collect());
        }
        if let Some(seed) = self.cfg.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn encode_turn(turn: &ChatTurn) -> Value {
    let role = match turn.role {
        ChatRole::System => "system",
        ChatRole::User => "user",
        ChatRole::Assistant => "assistant",
        ChatRole::Tool => "tool",
    };
    let mut msg = json!({ "role": role, "content": turn.content });
    if !turn.tool_calls.is_empty() {
        msg["tool_calls"] = turn
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": { "name": c.name, "arguments": c.arguments.to_string() },
                })
            })
            .collect();
    }
    if let Some(id) = &turn.tool_call_id {
        msg["tool_call_id"] = json!(id);
    }
    msg
}

fn decode_reply(body: &str) -> Result<ChatReply, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")))?;
    let message = &v["choices"][0]["message"];
    if message.is_null() {
        return Err(GatewayError::Protocol("response has no choices[0].message".into()));
    }
    let content = message["content"].as_str().unwrap_or_default().to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = message["tool_calls"].as_array() {
        for call in calls {
            let name = call["function"]["name"]
                .as_str()
                .ok_or_else(|| GatewayError::Protocol("tool call without a function name".into()))?;
            // Arguments arrive as a JSON-encoded string; malformed ones are
            // passed through as a string for the dispatcher to reject.
            let arguments = match &call["function"]["arguments"] {
                Value::String(s) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
                other => other.clone(),
            };
            tool_calls.push(ToolCall {
                id: call["id"].as_str().unwrap_or_default().to_string(),
                name: name.to_string(),
                arguments,
            });
        }
    }
    let usage = Usage {
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ChatReply {
        turn: ChatTurn::assistant(content, tool_calls),
        usage,
    })
}

fn is_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length_exceeded") || lower.contains("maximum context length")
}

impl<T: Transport> ChatBackend for LiveBackend<T> {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<ChatReply, GatewayError> {
        let body = self.request_body(req);
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.cfg.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let last_error = match self.transport.post_json(&self.cfg.endpoint, &headers, &body) {
                Ok(resp) if (200..300).contains(&resp.status) => return decode_reply(&resp.body),
                Ok(resp) if resp.status == 400 && is_context_overflow(&resp.body) => {
                    return Err(GatewayError::ContextOverflow(resp.body));
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => format!("HTTP {}: {}", resp.status, resp.body),
                Ok(resp) => {
                    return Err(GatewayError::BackendUnavailable {
                        attempts: attempt,
                        detail: format!("HTTP {}: {}", resp.status, resp.body),
                    });
                }
                Err(e) => e,
            };
            if attempt > self.cfg.retry_limit {
                return Err(GatewayError::BackendUnavailable {
                    attempts: attempt,
                    detail: last_error,
                });
            }
            let delay = self.cfg.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
            tracing::warn!(attempt, ?delay, error = %last_error, "chat request failed, retrying");
            thread::sleep(delay);
        }
    }

    fn name(&self) -> &'static str {
        "live"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentKind;
    use std::sync::Mutex;

    struct Canned {
        responses: Mutex<Vec<Result<HttpResponse, String>>>,
        calls: AtomicU32,
    }

    impl Canned {
        fn new(mut responses: Vec<Result<HttpResponse, String>>) -> Self {
            responses.reverse();
            Canned {
                responses: Mutex::new(responses),
                calls: AtomicU32::new(0),
            }
        }
    }

    impl Transport for Canned {
        fn post_json(&self, _: &str, _: &[(String, String)], _: &Value) -> Result<HttpResponse, String> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.responses.lock().unwrap().pop().unwrap_or(Err("no more responses".into()))
        }
    }

    fn http(status: u16, body: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status,
            body: body.to_string(),
        })
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hi","tool_calls":[{"id":"c1","type":"function","function":{"name":"bash","arguments":"{\"command\":\"ls\"}"}}]}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;

    fn cfg(retries: u32) -> LiveConfig {
        LiveConfig {
            retry_limit: retries,
            backoff_base: Duration::from_millis(1),
            ..LiveConfig::default()
        }
    }

    fn request(history: &[ChatTurn]) -> ChatRequest<'_> {
        ChatRequest {
            task_id: "t",
            role: AgentKind::CodeGenerator,
            history,
            tools: &[],
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let backend = LiveBackend::with_transport(cfg(3), Canned::new(vec![http(500, "boom"), http(500, "boom"), http(200, OK)]));
        let history = [ChatTurn::system("s")];
        let reply = backend.complete(&request(&history)).unwrap();
        assert_eq!(backend.attempts(), 3);
        assert_eq!(backend.transport.calls.load(Ordering::Relaxed), 3);
        assert_eq!(reply.turn.content, "hi");
        assert_eq!(reply.turn.tool_calls[0].arguments["command"], "ls");
        assert_eq!(reply.usage, Usage { prompt_tokens: 12, completion_tokens: 3 });
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let backend = LiveBackend::with_transport(cfg(1), Canned::new(vec![http(503, "x"), Err("reset".into()), http(200, OK)]));
        let history = [ChatTurn::system("s")];
        match backend.complete(&request(&history)) {
            Err(GatewayError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn context_overflow_is_not_retried() {
        let backend = LiveBackend::with_transport(
            cfg(3),
            Canned::new(vec![http(400, r#"{"error":{"code":"context_length_exceeded"}}"#)]),
        );
        let history = [ChatTurn::system("s")];
        assert!(matches!(backend.complete(&request(&history)), Err(GatewayError::ContextOverflow(_))));
        assert_eq!(backend.attempts(), 1);
    }

    #[test]
    fn request_encodes_tool_turns() {
        let backend = LiveBackend::with_transport(cfg(0), Canned::new(vec![]));
        let history = [
            ChatTurn::system("s"),
            ChatTurn::assistant(
                "",
                vec![ToolCall {
                    id: "c1".into(),
                    name: "bash".into(),
                    arguments: json!({"command": "ls"}),
                }],
            ),
            ChatTurn::tool_result("c1", "out"),
        ];
        let body = backend.request_body(&request(&history));
        assert_eq!(body["messages"][1]["tool_calls"][0]["function"]["arguments"], r#"{"command":"ls"}"#);
        assert_eq!(body["messages"][2]["tool_call_id"], "c1");
    }
}
