//! Wire codec for tool calls and tool results.
//!
//! Tool calls use the chat-completions shape, with the arguments object
//! carried as a JSON-encoded string:
//!
//! ```json
//! [{"id": "call_1", "type": "function",
//!   "function": {"name": "query_window", "arguments": "{\"metric\":\"pps_in\"}"}}]
//! ```
//!
//! Tool results are one object:
//!
//! ```json
//! {"tool_call_id": "call_1", "name": "query_window", "content": "...", "is_error": false}
//! ```
//!
//! Parsing is all-or-nothing: a payload either yields every call or an
//! error with its position, never a partial list.

use super::{ToolCall, ToolResult};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed-payload at line {line}, column {column}{}: {message}", .context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
pub struct CodecError {
    pub line: usize,
    pub column: usize,
    /// Which nested element failed, e.g. `arguments of call 2`.
    pub context: Option<String>,
    pub message: String,
}

impl CodecError {
    fn from_json(e: serde_json::Error, context: Option<String>) -> Self {
        Self { line: e.line(), column: e.column(), context, message: e.to_string() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct WireToolCall {
    pub id: String,
    #[serde(rename = "type", default = "function_type")]
    pub kind: String,
    pub function: WireFunction,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct WireFunction {
    pub name: String,
    pub arguments: String,
}

fn function_type() -> String {
    "function".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireToolResult {
    tool_call_id: String,
    name: String,
    content: String,
    #[serde(default)]
    is_error: bool,
}

pub(crate) fn to_wire(call: &ToolCall) -> WireToolCall {
    WireToolCall {
        id: call.call_id.clone(),
        kind: function_type(),
        function: WireFunction {
            name: call.tool_name.clone(),
            arguments: Value::Object(call.arguments.clone()).to_string(),
        },
    }
}

pub(crate) fn from_wire(index: usize, w: WireToolCall) -> Result<ToolCall, CodecError> {
    let context = || Some(format!("call {index}"));
    if w.kind != "function" {
        return Err(CodecError { line: 0, column: 0, context: context(), message: format!("unsupported type `{}`", w.kind) });
    }
    if w.function.name.is_empty() {
        return Err(CodecError { line: 0, column: 0, context: context(), message: "empty tool name".into() });
    }
    let raw = if w.function.arguments.trim().is_empty() { "{}" } else { w.function.arguments.as_str() };
    let args: Value =
        serde_json::from_str(raw).map_err(|e| CodecError::from_json(e, Some(format!("arguments of call {index}"))))?;
    let Value::Object(arguments) = args else {
        return Err(CodecError {
            line: 0,
            column: 0,
            context: Some(format!("arguments of call {index}")),
            message: "arguments must be a JSON object".into(),
        });
    };
    Ok(ToolCall { call_id: w.id, tool_name: w.function.name, arguments })
}

pub fn serialize_tool_calls(calls: &[ToolCall]) -> String {
    let wire: Vec<WireToolCall> = calls.iter().map(to_wire).collect();
    serde_json::to_string(&wire).expect("tool calls serialize")
}

pub fn parse_tool_calls(payload: &str) -> Result<Vec<ToolCall>, CodecError> {
    let wire: Vec<WireToolCall> = serde_json::from_str(payload).map_err(|e| CodecError::from_json(e, None))?;
    wire.into_iter().enumerate().map(|(i, w)| from_wire(i, w)).collect()
}

pub fn serialize_tool_result(result: &ToolResult) -> String {
    let wire = WireToolResult {
        tool_call_id: result.call_id.clone(),
        name: result.tool_name.clone(),
        content: result.content.clone(),
        is_error: result.is_error,
    };
    serde_json::to_string(&wire).expect("tool result serializes")
}

pub fn parse_tool_result(payload: &str) -> Result<ToolResult, CodecError> {
    let w: WireToolResult = serde_json::from_str(payload).map_err(|e| CodecError::from_json(e, None))?;
    Ok(ToolResult { call_id: w.tool_call_id, tool_name: w.name, content: w.content, is_error: w.is_error })
}

/// Convenience for building argument maps in code.
pub fn args(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
