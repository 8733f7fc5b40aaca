//! Chat-completions client for a locally hosted model server.
//!
//! Request body:
//!
//! | field         | value                                                     |
//! |---------------|-----------------------------------------------------------|
//! | `model`       | `model_name`                                              |
//! | `messages`    | `[{role, content, tool_calls?, tool_call_id?, name?}]`    |
//! | `tools`       | `[{type: "function", function: {name, description, parameters}}]` |
//! | `temperature` | `temperature`                                             |
//! | `max_tokens`  | `max_tokens`                                              |
//! | `stream`      | `false`                                                   |
//!
//! The response's `choices[0].message` supplies `content` and/or
//! `tool_calls` in the format of [`super::codec`].

use super::codec::{from_wire, to_wire, WireToolCall};
use super::{check_history, BackendConfig, BackendError, ChatTurn, ModelBackend, Role, ToolSchema};
use serde::Deserialize;
use serde_json::{json, Value};
use std::time::Duration;

pub struct HttpBackend {
    cfg: BackendConfig,
    url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("url", &self.url).field("model", &self.cfg.model_name).finish()
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let url = cfg.endpoint_url.clone().expect("validated");
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, url, agent })
    }

    pub fn request_body(&self, history: &[ChatTurn], tools: &[ToolSchema]) -> Value {
        let messages: Vec<Value> = history.iter().map(wire_message).collect();
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| {
                json!({"type": "function", "function": {
                    "name": t.name, "description": t.description, "parameters": t.parameters}})
            })
            .collect();
        let mut body = json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "stream": false,
        });
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools);
        }
        body
    }
}

fn wire_message(turn: &ChatTurn) -> Value {
    let mut m = json!({"role": turn.role.as_str(), "content": turn.content});
    if !turn.tool_calls.is_empty() {
        let calls: Vec<WireToolCall> = turn.tool_calls.iter().map(to_wire).collect();
        m["tool_calls"] = serde_json::to_value(calls).expect("tool calls serialize");
    }
    if let (Role::Tool, Some(r)) = (turn.role, &turn.tool_result) {
        m["tool_call_id"] = json!(r.call_id);
        m["name"] = json!(r.tool_name);
    }
    m
}

/// Parses a chat-completions response body into an assistant turn.
pub(crate) fn parse_response(body: &str) -> Result<ChatTurn, BackendError> {
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(format!("{e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    let calls = choice
        .message
        .tool_calls
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, w)| from_wire(i, w))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let turn = ChatTurn {
        role: Role::Assistant,
        content: choice.message.content.unwrap_or_default(),
        tool_calls: calls,
        tool_result: None,
    };
    turn.validate().map_err(|_| BackendError::MalformedResponse("assistant message is empty".into()))?;
    Ok(turn)
}

impl ModelBackend for HttpBackend {
    fn complete(&self, history: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, BackendError> {
        check_history(history)?;
        let body = self.request_body(history, tools).to_string();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unreachable(format!("reading response: {e}")))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(if status.is_server_error() {
                BackendError::Unreachable(format!("HTTP {status}: {snippet}"))
            } else {
                BackendError::MalformedResponse(format!("HTTP {status}: {snippet}"))
            });
        }
        parse_response(&text)
    }

    fn describe(&self) -> String {
        format!("http {} model={}", self.url, self.cfg.model_name)
    }

    fn reachable(&self) -> bool {
        // Any HTTP answer counts; only transport failures mean unreachable.
        self.agent.get(&self.url).call().is_ok()
    }
}
