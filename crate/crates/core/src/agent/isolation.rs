//! Structural checks on inter-agent messages.
//!
//! A message passes when
//! - its sender is registered and a directed recipient is another
//!   registered agent,
//! - its payload decodes as the type its kind requires,
//! - nothing reachable in the payload is a raw telemetry record, either as
//!   a JSON object shaped like one or as text holding a parseable record
//!   line, and
//! - every store read in its evidence targets the sender's own scope.

use super::{AgentPlan, MessageKind, PatternReport, Recipient, TextPayload};
use super::AgentMessage;
use crate::telemetry::parse_record;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Violation(Vec<String>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Violation(_) => "violation",
        }
    }
}

/// Agent id → the one store it may read (`None` for the coordinator).
pub type ScopeRegistry = BTreeMap<String, Option<String>>;

/// Field sets that identify a serialized raw record. An object holding
/// every key of any set is treated as a record.
const RECORD_SIGNATURES: &[&[&str]] = &[
    &["interface_id", "pkts_in", "octets_in"],
    &["if", "pkts_in", "octets_in"],
    &["src_addr", "dst_addr", "bytes", "packets"],
    &["port_id", "rx_power_dbm"],
    &["port", "rx_power_dbm"],
];

/// Longest record line, in space-separated tokens.
const MAX_RECORD_TOKENS: usize = 11;

fn text_has_record(s: &str) -> bool {
    if !s.contains("kind=") {
        return false;
    }
    // Any whitespace run separates tokens, so line breaks and tabs inside
    // a record do not hide it.
    let tokens: Vec<&str> = s.split_whitespace().collect();
    for (i, t) in tokens.iter().enumerate() {
        if !t.starts_with("kind=") {
            continue;
        }
        for n in 1..=MAX_RECORD_TOKENS.min(tokens.len() - i) {
            if parse_record(&tokens[i..i + n].join(" "), None).is_ok() {
                return true;
            }
        }
    }
    false
}

/// JSON objects embedded in text, e.g. a serialized record pasted into an
/// answer.
fn embedded_json(s: &str) -> Vec<Value> {
    let mut out = Vec::new();
    for (i, _) in s.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&s[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            out.push(v);
        }
    }
    out
}

fn find_raw(v: &Value, path: &str, out: &mut Vec<String>) {
    match v {
        Value::String(s) => {
            if text_has_record(s) {
                out.push(format!("raw record line in text at {path}"));
            }
            if s.contains('{') {
                for inner in embedded_json(s) {
                    find_raw(&inner, &format!("{path}<json>"), out);
                }
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                find_raw(item, &format!("{path}[{i}]"), out);
            }
        }
        Value::Object(map) => {
            if RECORD_SIGNATURES.iter().any(|sig| sig.iter().all(|k| map.contains_key(*k))) {
                out.push(format!("raw record object at {path}"));
            }
            for (k, item) in map {
                find_raw(item, &format!("{path}.{k}"), out);
            }
        }
        _ => {}
    }
}

fn payload_type_error(msg: &AgentMessage) -> Option<String> {
    let p = msg.payload.clone();
    let res = match msg.kind {
        MessageKind::Report => match serde_json::from_value::<PatternReport>(p) {
            Ok(r) if r.agent_id != msg.sender => {
                return Some(format!("report agent_id `{}` differs from sender", r.agent_id))
            }
            Ok(_) => Ok(()),
            Err(e) => Err(e),
        },
        MessageKind::Plan => serde_json::from_value::<AgentPlan>(p).map(drop),
        MessageKind::Ask | MessageKind::Answer | MessageKind::Result => {
            serde_json::from_value::<TextPayload>(p).map(drop)
        }
    };
    res.err().map(|e| format!("payload is not a {} payload: {e}", msg.kind.as_str()))
}

/// Verdict for one message; total over all inputs.
pub fn enforce_isolation(msg: &AgentMessage, scopes: &ScopeRegistry) -> Verdict {
    let mut reasons = Vec::new();
    let sender_scope = match scopes.get(&msg.sender) {
        Some(s) => Some(s),
        None => {
            reasons.push(format!("unknown sender `{}`", msg.sender));
            None
        }
    };
    match &msg.recipient {
        Recipient::Agent(to) if to == &msg.sender => reasons.push("sender and recipient are the same".into()),
        Recipient::Agent(to) if !scopes.contains_key(to) => reasons.push(format!("unknown recipient `{to}`")),
        Recipient::Broadcast if msg.kind != MessageKind::Report => {
            reasons.push(format!("{} messages cannot be broadcast", msg.kind.as_str()))
        }
        _ => {}
    }
    if let Some(e) = payload_type_error(msg) {
        reasons.push(e);
    }
    find_raw(&msg.payload, "payload", &mut reasons);
    if let Some(scope) = sender_scope {
        for read in &msg.evidence {
            if scope.as_deref() != Some(read.store.as_str()) {
                reasons.push(format!("evidence reads store `{}` outside sender scope", read.store));
            }
        }
    }
    if reasons.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Violation(reasons)
    }
}
