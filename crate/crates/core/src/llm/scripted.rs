//! Deterministic rule-driven model stand-in.
//!
//! A script is a list of `pattern -> action` lines, tried in order against
//! the newest user or tool turn; the first match wins.
//!
//! Patterns:
//! - `user:<text>`: newest turn is a user turn containing `<text>` (case-insensitive)
//! - `tool:<name>`: newest turn is the result of tool `<name>` (`tool:*` for any tool)
//! - `*`: anything
//! - `<text>`: newest user or tool turn contains `<text>`
//!
//! Actions:
//! - `say:<text>`: final answer. `{question}` expands to the newest user
//!   turn, `{result}` to the newest tool result and `{result.a.b}` to a
//!   field of it.
//! - `call:<tool>(<json object>)`: a tool call; several may be joined with `;`.
//!
//! `#` starts a comment line. `→` may be used instead of `->`.

use super::{check_history, BackendError, ChatTurn, ModelBackend, Role, ToolCall, ToolSchema};
use serde_json::{Map, Value};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TurnPattern {
    User(String),
    Tool(String),
    Any,
    Contains(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptAction {
    Say(String),
    Call(Vec<(String, Map<String, Value>)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptRule {
    pub pattern: TurnPattern,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScriptError { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ScriptError { line: idx + 1, message };
            let (pat, act) = line
                .split_once("->")
                .or_else(|| line.split_once('→'))
                .ok_or_else(|| err("expected `pattern -> action`".into()))?;
            let pattern = parse_pattern(pat.trim()).map_err(err)?;
            let action = parse_action(act.trim()).map_err(err)?;
            rules.push(ScriptRule { pattern, action });
        }
        Ok(Script { rules })
    }
}

fn parse_pattern(p: &str) -> Result<TurnPattern, String> {
    if p.is_empty() {
        return Err("empty pattern".into());
    }
    Ok(if p == "*" {
        TurnPattern::Any
    } else if let Some(rest) = p.strip_prefix("user:") {
        TurnPattern::User(rest.trim().to_lowercase())
    } else if let Some(rest) = p.strip_prefix("tool:") {
        TurnPattern::Tool(rest.trim().to_string())
    } else {
        TurnPattern::Contains(p.to_lowercase())
    })
}

fn parse_action(a: &str) -> Result<ScriptAction, String> {
    if let Some(text) = a.strip_prefix("say:") {
        return Ok(ScriptAction::Say(text.trim().to_string()));
    }
    let mut calls = Vec::new();
    let mut rest = a;
    loop {
        let body = rest
            .trim_start()
            .strip_prefix("call:")
            .ok_or_else(|| format!("action must start with `say:` or `call:`, got `{rest}`"))?;
        let open = body.find('(').ok_or("expected `(` after tool name")?;
        let name = body[..open].trim();
        if name.is_empty() {
            return Err("empty tool name".into());
        }
        let after = body[open + 1..].trim_start();
        let (args, tail) = if let Some(tail) = after.strip_prefix(')') {
            (Map::new(), tail)
        } else {
            let mut stream = serde_json::Deserializer::from_str(after).into_iter::<Value>();
            let value = stream
                .next()
                .ok_or("missing arguments")?
                .map_err(|e| format!("arguments of `{name}`: {e}"))?;
            let Value::Object(map) = value else {
                return Err(format!("arguments of `{name}` must be a JSON object"));
            };
            let tail = after[stream.byte_offset()..]
                .trim_start()
                .strip_prefix(')')
                .ok_or_else(|| format!("expected `)` after arguments of `{name}`"))?;
            (map, tail)
        };
        calls.push((name.to_string(), args));
        let tail = tail.trim_start();
        if tail.is_empty() {
            break;
        }
        rest = tail.strip_prefix(';').ok_or_else(|| format!("unexpected trailing text `{tail}`"))?;
    }
    Ok(ScriptAction::Call(calls))
}

/// Backend that answers from a [`Script`]. A pure function of
/// (history, script); tool schemas are ignored.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script }
    }

    pub fn from_text(text: &str) -> Result<Self, ScriptError> {
        Script::parse(text).map(Self::new)
    }
}

fn matches(pattern: &TurnPattern, turn: &ChatTurn) -> bool {
    match pattern {
        TurnPattern::Any => true,
        TurnPattern::User(s) => turn.role == Role::User && turn.content.to_lowercase().contains(s.as_str()),
        TurnPattern::Tool(name) => {
            turn.role == Role::Tool
                && turn
                    .tool_result
                    .as_ref()
                    .is_some_and(|r| name == "*" || r.tool_name == *name)
        }
        TurnPattern::Contains(s) => turn.content.to_lowercase().contains(s.as_str()),
    }
}

fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, key| match v {
        Value::Object(m) => m.get(key),
        Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn render(template: &str, history: &[ChatTurn]) -> String {
    let question = history.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str());
    let result = history.iter().rev().find(|t| t.role == Role::Tool).and_then(|t| t.tool_result.as_ref());
    let parsed = result.and_then(|r| serde_json::from_str::<Value>(&r.content).ok());

    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let Some(close) = rest[open..].find('}') else {
            out.push_str(&rest[open..]);
            return out;
        };
        let key = &rest[open + 1..open + close];
        let expansion = match key {
            "question" => question.map(str::to_string),
            "result" => result.map(|r| r.content.clone()),
            k => k.strip_prefix("result.").and_then(|path| {
                parsed.as_ref().and_then(|v| lookup(v, path)).map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
            }),
        };
        match expansion {
            Some(s) => out.push_str(&s),
            None => out.push_str(&rest[open..=open + close]),
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, history: &[ChatTurn], _tools: &[ToolSchema]) -> Result<ChatTurn, BackendError> {
        check_history(history)?;
        let newest = history
            .iter()
            .rev()
            .find(|t| matches!(t.role, Role::User | Role::Tool))
            .ok_or_else(|| BackendError::InvalidHistory("no user or tool turn".into()))?;
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| matches(&r.pattern, newest))
            .ok_or_else(|| BackendError::NoScriptMatch {
                role: newest.role.as_str().to_string(),
                content: newest.content.chars().take(200).collect(),
            })?;
        Ok(match &rule.action {
            ScriptAction::Say(text) => ChatTurn::assistant(render(text, history)),
            ScriptAction::Call(calls) => {
                let prior_calls: usize = history.iter().map(|t| t.tool_calls.len()).sum();
                let calls = calls
                    .iter()
                    .enumerate()
                    .map(|(i, (name, args))| ToolCall::new(format!("call_{}", prior_calls + i + 1), name, args.clone()))
                    .collect();
                ChatTurn::assistant_calls(calls)
            }
        })
    }

    fn describe(&self) -> String {
        format!("scripted ({} rules)", self.script.rules.len())
    }
}
