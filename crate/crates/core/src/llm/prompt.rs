use super::{codec, ChatTurn, Role};
use crate::telemetry::{DbKind, Timestamp};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const DEFAULT_PROMPT_BUDGET: usize = 6000;

/// What an agent's system turn tells the model about its database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSchema {
    pub store_name: String,
    pub kind: DbKind,
    pub entity_count: usize,
    /// A prefix of the sorted entity list.
    pub entity_sample: Vec<String>,
    pub metrics: Vec<String>,
    pub coverage: Option<(Timestamp, Timestamp)>,
}

impl ScopeSchema {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Database `{}` ({} telemetry).", self.store_name, self.kind);
        let _ = write!(out, "Entities: {}", self.entity_count);
        if !self.entity_sample.is_empty() {
            let _ = write!(out, " (e.g. {})", self.entity_sample.join(", "));
        }
        out.push('\n');
        let _ = writeln!(out, "Metrics: {}", self.metrics.join(", "));
        match self.coverage {
            Some((a, b)) => {
                let _ = writeln!(out, "Time coverage: {a} .. {b} (seconds since epoch)");
            }
            None => out.push_str("Time coverage: empty\n"),
        }
        out
    }
}

/// Size of a turn in characters, counting serialized tool calls.
pub fn turn_chars(turn: &ChatTurn) -> usize {
    let calls = if turn.tool_calls.is_empty() {
        0
    } else {
        codec::serialize_tool_calls(&turn.tool_calls).chars().count()
    };
    turn.content.chars().count() + calls
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// Builds `[system, ..history, user(question)]` within `budget` characters.
///
/// History is dropped oldest first. The system turn and the question are
/// always present; only if they alone exceed the budget is the system text
/// (and, failing that, the question) cut short. A history that would start
/// with an orphaned tool result loses that turn too.
pub fn assemble_prompt(
    role_prompt: &str,
    schema: &ScopeSchema,
    history: &[ChatTurn],
    question: &str,
    budget: usize,
) -> Vec<ChatTurn> {
    let question = truncate_chars(question, budget);
    let q_len = question.chars().count();
    let system_text = format!("{role_prompt}\n\n{}", schema.render());
    let system_text = truncate_chars(&system_text, budget - q_len);
    let mut remaining = budget - q_len - system_text.chars().count();

    let mut keep_from = history.len();
    for (i, turn) in history.iter().enumerate().rev() {
        let size = turn_chars(turn);
        if size > remaining {
            break;
        }
        remaining -= size;
        keep_from = i;
    }
    let mut kept = &history[keep_from..];
    while kept.first().is_some_and(|t| t.role == Role::Tool) {
        kept = &kept[1..];
    }

    let mut turns = Vec::with_capacity(kept.len() + 2);
    turns.push(ChatTurn::system(system_text));
    turns.extend(kept.iter().filter(|t| t.role != Role::System).cloned());
    turns.push(ChatTurn::user(question));
    turns
}
