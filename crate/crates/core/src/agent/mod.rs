//! Scoped database agents, the coordinator, and the message bus between
//! them.
//!
//! Each [`ScopedAgent`] owns exactly one store. On a tick it runs the
//! detector over its scope and, if the findings merit escalation,
//! broadcasts a [`PatternReport`]. On a query it runs a bounded tool loop
//! against the model backend. The [`Coordinator`] has no store; it plans
//! which agents to ask, exchanges messages with them over the
//! [`MessageBus`], and merges their answers.

mod audit;
mod bus;
mod coordinator;
mod isolation;
mod message;
mod scoped;
pub mod tools;

pub use audit::{AuditEvent, AuditLog, AuditRecord, ToolOutcome};
pub use bus::MessageBus;
pub use coordinator::{CoordinatedAnswer, Coordinator, Finding, PlanSource};
pub use isolation::{enforce_isolation, ScopeRegistry, Verdict};
pub use message::{
    clip_summary, AgentMessage, MessageKind, PatternReport, Recipient, StoreRead, TextPayload, SUMMARY_MAX_CHARS,
};
pub use scoped::{escalates, QueryOutcome, ScopedAgent, TickOutcome};

use crate::correlate::TopologyMap;
use crate::detect::{DetectorConfig, Window};
use crate::llm::{BackendError, ModelBackend, ToolCall, ToolResult};
use crate::store::Store;
use crate::telemetry::DbKind;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_STEP_BUDGET: usize = 8;
pub const COORDINATOR_ID: &str = "coordinator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    /// Store the agent may read; `None` for the coordinator.
    pub scope: Option<String>,
    pub tool_whitelist: Vec<String>,
    pub role_prompt: String,
}

impl AgentSpec {
    pub fn scoped(store: &Store) -> Self {
        Self {
            agent_id: store.name().to_string(),
            scope: Some(store.name().to_string()),
            tool_whitelist: tools::SCOPED_TOOLS.iter().map(|s| s.to_string()).collect(),
            role_prompt: default_role_prompt(store.kind()),
        }
    }

    pub fn coordinator() -> Self {
        Self {
            agent_id: COORDINATOR_ID.into(),
            scope: None,
            tool_whitelist: tools::COORDINATOR_TOOLS.iter().map(|s| s.to_string()).collect(),
            role_prompt: "You coordinate database agents for a conference network. \
                Split the operator's question into sub-questions for the agents that can answer them. \
                Reply with JSON only: {\"steps\": [{\"agent\": \"<agent id>\", \"question\": \"<text>\"}]}."
                .into(),
        }
    }
}

pub fn default_role_prompt(kind: DbKind) -> String {
    let what = match kind {
        DbKind::Interface => "interface counters (packet, byte and error rates per switch interface)",
        DbKind::Flow => "flow summaries (conversations by source address)",
        DbKind::Optical => "optical transceiver power readings (tx/rx dBm per port)",
    };
    format!(
        "You are the {kind} agent of a conference network monitoring team. You can only see {what}. \
         First monitor the data with tools, then identify anything anomalous, then propose a fix. \
         Answer from tool results only."
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub agent_id: String,
    pub question: String,
    pub status: StepStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPlan {
    pub plan_id: String,
    pub query: String,
    pub steps: Vec<PlanStep>,
}

impl AgentPlan {
    pub fn is_complete(&self) -> bool {
        self.steps.iter().all(|s| s.status != StepStatus::Pending)
    }
}

/// Detection result attached to a transcript entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub window: Window,
    pub events: usize,
}

/// One executed (or refused) tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub agent_id: String,
    pub step: usize,
    pub call: ToolCall,
    pub result: ToolResult,
    pub outcome: ToolOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub store_reads: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no-agents: no scoped agent is registered")]
    NoAgents,
    #[error("insufficient-baseline: {skipped} series lack a full baseline")]
    InsufficientBaseline { skipped: usize },
    #[error("detection failed: {0}")]
    Detect(String),
    #[error("bus: {0}")]
    Bus(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// All agents plus the shared bus and audit log.
pub struct AgentRuntime {
    pub coordinator: Coordinator,
    pub bus: Arc<MessageBus>,
    pub audit: Arc<AuditLog>,
}

impl AgentRuntime {
    pub fn new(
        stores: &[Arc<Store>],
        backend: Arc<dyn ModelBackend>,
        topology: Arc<TopologyMap>,
        detector_for: impl Fn(DbKind) -> DetectorConfig,
        audit: Arc<AuditLog>,
        step_budget: usize,
    ) -> Self {
        let bus = Arc::new(MessageBus::new(audit.clone()));
        let agents: Vec<Arc<ScopedAgent>> = stores
            .iter()
            .map(|s| {
                let spec = AgentSpec::scoped(s);
                bus.register(&spec.agent_id, spec.scope.as_deref());
                Arc::new(
                    ScopedAgent::new(spec, s.clone(), detector_for(s.kind()), backend.clone(), audit.clone())
                        .with_step_budget(step_budget),
                )
            })
            .collect();
        let spec = AgentSpec::coordinator();
        bus.register(&spec.agent_id, None);
        let coordinator = Coordinator::new(spec, agents, backend, bus.clone(), topology, step_budget);
        Self { coordinator, bus, audit }
    }

    /// Ticks every agent for `window`; returns each agent's outcome in
    /// agent order.
    pub fn tick_all(&self, window: Window) -> Vec<(String, Result<TickOutcome, AgentError>)> {
        let agents = self.coordinator.agents();
        std::thread::scope(|s| {
            let handles: Vec<_> = agents
                .iter()
                .map(|a| {
                    let bus = &self.bus;
                    s.spawn(move || (a.id().to_string(), a.tick(window, bus)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("tick thread panicked")).collect()
        })
    }
}
