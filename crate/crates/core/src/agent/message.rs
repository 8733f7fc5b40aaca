use crate::detect::{AnomalyEvent, Window};
use crate::telemetry::{DbKind, Timestamp};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SUMMARY_MAX_CHARS: usize = 2000;

/// Escalated findings of one agent for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternReport {
    pub report_id: String,
    pub agent_id: String,
    /// Kind of the scope the events came from.
    pub db_kind: DbKind,
    pub window: Window,
    pub events: Vec<AnomalyEvent>,
    pub summary: String,
    pub correlation_keys: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Report,
    Ask,
    Answer,
    Plan,
    Result,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Report => "report",
            MessageKind::Ask => "ask",
            MessageKind::Answer => "answer",
            MessageKind::Plan => "plan",
            MessageKind::Result => "result",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "to", content = "agent")]
pub enum Recipient {
    Agent(String),
    Broadcast,
}

/// One store read recorded as evidence for a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRead {
    pub store: String,
    pub tool: String,
}

/// Typed message payloads. On the bus the payload travels as JSON and is
/// re-validated against its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub msg_id: u64,
    pub sender: String,
    pub recipient: Recipient,
    pub kind: MessageKind,
    pub payload: Value,
    #[serde(default)]
    pub evidence: Vec<StoreRead>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
    pub ts: Timestamp,
}

impl AgentMessage {
    fn build(sender: &str, recipient: Recipient, kind: MessageKind, payload: Value, ts: Timestamp) -> Self {
        Self { msg_id: 0, sender: sender.into(), recipient, kind, payload, evidence: Vec::new(), in_reply_to: None, ts }
    }

    pub fn report(report: &PatternReport, ts: Timestamp) -> Self {
        let payload = serde_json::to_value(report).expect("report serializes");
        Self::build(&report.agent_id, Recipient::Broadcast, MessageKind::Report, payload, ts)
    }

    pub fn text(sender: &str, to: &str, kind: MessageKind, text: &str, ts: Timestamp) -> Self {
        let payload = serde_json::to_value(TextPayload { text: text.into() }).expect("text serializes");
        Self::build(sender, Recipient::Agent(to.into()), kind, payload, ts)
    }

    pub fn with_evidence(mut self, evidence: Vec<StoreRead>) -> Self {
        self.evidence = evidence;
        self
    }

    pub fn reply_to(mut self, msg_id: u64) -> Self {
        self.in_reply_to = Some(msg_id);
        self
    }

    pub fn as_report(&self) -> Option<PatternReport> {
        (self.kind == MessageKind::Report).then(|| serde_json::from_value(self.payload.clone()).ok()).flatten()
    }

    pub fn as_text(&self) -> Option<String> {
        serde_json::from_value::<TextPayload>(self.payload.clone()).ok().map(|t| t.text)
    }
}

/// Truncates to the report summary limit on a char boundary.
pub fn clip_summary(s: &str) -> String {
    s.chars().take(SUMMARY_MAX_CHARS).collect()
}
