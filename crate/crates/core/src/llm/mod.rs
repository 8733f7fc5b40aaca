//! Language-model backends and the tool-call exchange protocol.
//!
//! Agents talk to a model through [`ModelBackend`]. Two implementations
//! exist: [`HttpBackend`] speaks the chat-completions wire schema to a
//! model server on the same host, and [`ScriptedBackend`] answers from an
//! ordered rule file so that whole agent sessions are reproducible in
//! tests.

pub mod codec;
mod http;
mod prompt;
mod scripted;

pub use codec::{parse_tool_calls, parse_tool_result, serialize_tool_calls, serialize_tool_result, CodecError};
pub use http::HttpBackend;
pub use prompt::{assemble_prompt, turn_chars, ScopeSchema, DEFAULT_PROMPT_BUDGET};
pub use scripted::{Script, ScriptAction, ScriptError, ScriptRule, ScriptedBackend, TurnPattern};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// A structured request from the model to run a named tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool_name: impl Into<String>, arguments: Map<String, Value>) -> Self {
        Self { call_id: call_id.into(), tool_name: tool_name.into(), arguments }
    }
}

/// Output of one tool execution, as fed back to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub tool_name: String,
    /// Serialized JSON result, or an error message when `is_error`.
    pub content: String,
    #[serde(default)]
    pub is_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result: Option<ToolResult>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), tool_calls: Vec::new(), tool_result: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), tool_calls: Vec::new(), tool_result: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), tool_calls: Vec::new(), tool_result: None }
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        Self { role: Role::Assistant, content: String::new(), tool_calls: calls, tool_result: None }
    }

    pub fn tool(result: ToolResult) -> Self {
        Self { role: Role::Tool, content: result.content.clone(), tool_calls: Vec::new(), tool_result: Some(result) }
    }

    /// Tool turns carry a result; assistant turns carry text or calls.
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.role {
            Role::Tool if self.tool_result.is_none() => {
                Err(BackendError::InvalidTurn("tool turn without tool_result".into()))
            }
            Role::Assistant if self.content.is_empty() && self.tool_calls.is_empty() => {
                Err(BackendError::InvalidTurn("assistant turn with neither content nor tool calls".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Declaration of a tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON Schema of the arguments object.
    pub parameters: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
}

fn default_model() -> String {
    "local-model".to_string()
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout() -> u64 {
    60
}

impl BackendConfig {
    pub fn scripted(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_url: None,
            model_name: default_model(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            script_path: Some(path.into()),
        }
    }

    pub fn http(url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(url.into()),
            model_name: default_model(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            script_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Http if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("http backend requires endpoint_url".into()))
            }
            BackendKind::Scripted if self.script_path.is_none() => {
                Err(BackendError::Config("scripted backend requires script_path".into()))
            }
            _ if self.timeout_s == 0 => Err(BackendError::Config("timeout_s must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend-unreachable: {0}")]
    Unreachable(String),
    #[error("malformed-response: {0}")]
    MalformedResponse(String),
    #[error("no-script-match for {role} turn: {content:?}")]
    NoScriptMatch { role: String, content: String },
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("invalid turn: {0}")]
    InvalidTurn(String),
    #[error("backend config: {0}")]
    Config(String),
}

/// A chat model that proposes either a final answer or tool calls.
pub trait ModelBackend: Send + Sync {
    /// Produces the next assistant turn. `history` must start with a system
    /// turn.
    fn complete(&self, history: &[ChatTurn], tools: &[ToolSchema]) -> Result<ChatTurn, BackendError>;

    /// Short description for health output.
    fn describe(&self) -> String;

    /// Cheap liveness probe.
    fn reachable(&self) -> bool {
        true
    }
}

pub(crate) fn check_history(history: &[ChatTurn]) -> Result<(), BackendError> {
    match history.first() {
        None => Err(BackendError::InvalidHistory("history is empty".into())),
        Some(t) if t.role != Role::System => {
            Err(BackendError::InvalidHistory("first turn must be the system turn".into()))
        }
        _ => Ok(()),
    }
}

/// Builds the backend selected by `cfg`.
pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn ModelBackend>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.clone())?),
        BackendKind::Scripted => {
            let path = cfg.script_path.as_ref().expect("validated");
            let script = Script::load(path).map_err(|e| BackendError::Config(e.to_string()))?;
            Arc::new(ScriptedBackend::new(script))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turn_invariants() {
        assert!(ChatTurn::assistant("").validate().is_err());
        assert!(ChatTurn::assistant("hi").validate().is_ok());
        let mut t = ChatTurn::user("x");
        t.role = Role::Tool;
        assert!(t.validate().is_err());
    }

    #[test]
    fn config_requires_kind_fields() {
        let mut cfg = BackendConfig::http("");
        assert!(cfg.validate().is_err());
        cfg.endpoint_url = Some("http://127.0.0.1:1/v1/chat/completions".into());
        assert!(cfg.validate().is_ok());
        let mut cfg = BackendConfig::scripted("x");
        cfg.script_path = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn history_must_start_with_system() {
        assert!(check_history(&[]).is_err());
        assert!(check_history(&[ChatTurn::user("q")]).is_err());
        assert!(check_history(&[ChatTurn::system("s"), ChatTurn::user("q")]).is_ok());
    }
}
