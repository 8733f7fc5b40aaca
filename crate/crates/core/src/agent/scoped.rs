use super::audit::{AuditEvent, AuditLog, ToolOutcome};
use super::tools::{self, detect_scope};
use super::{
    clip_summary, AgentError, AgentMessage, AgentSpec, DetectionSummary, MessageBus, MessageKind, PatternReport,
    StoreRead, TranscriptEntry, DEFAULT_STEP_BUDGET,
};
use crate::detect::{AnomalyEvent, DetectorConfig, Severity, Window};
use crate::llm::{assemble_prompt, ChatTurn, ModelBackend, ScopeSchema, ToolResult, ToolSchema, DEFAULT_PROMPT_BUDGET};
use crate::store::{metric_names, Store};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Warn events on a single entity that force escalation.
pub const WARN_ESCALATION_COUNT: usize = 3;

/// Escalation rule: any critical event, or enough events on one entity.
pub fn escalates(events: &[AnomalyEvent]) -> bool {
    if events.iter().any(|e| e.severity == Severity::Critical) {
        return true;
    }
    let mut per_entity: BTreeMap<&str, usize> = BTreeMap::new();
    for e in events {
        *per_entity.entry(&e.entity_id).or_default() += 1;
    }
    per_entity.values().any(|&n| n >= WARN_ESCALATION_COUNT)
}

/// Result of one tick: every detected event, and the report when they
/// escalated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub window: Window,
    pub events: Vec<AnomalyEvent>,
    /// Series evaluated with a full baseline.
    pub evaluated: usize,
    pub report: Option<PatternReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub answer: String,
    /// The step budget ran out before the model gave a final answer.
    pub partial: bool,
    /// Model calls made.
    pub steps: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl QueryOutcome {
    pub fn evidence(&self) -> Vec<StoreRead> {
        self.transcript
            .iter()
            .flat_map(|t| t.store_reads.iter().map(|s| StoreRead { store: s.clone(), tool: t.call.tool_name.clone() }))
            .collect()
    }
}

pub struct ScopedAgent {
    spec: AgentSpec,
    store: Arc<Store>,
    detector: DetectorConfig,
    backend: Arc<dyn ModelBackend>,
    audit: Arc<AuditLog>,
    step_budget: usize,
    prompt_budget: usize,
    /// Serializes this agent's work: one tick or query at a time.
    busy: Mutex<()>,
}

impl std::fmt::Debug for ScopedAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScopedAgent").field("spec", &self.spec).finish()
    }
}

impl ScopedAgent {
    pub fn new(
        spec: AgentSpec,
        store: Arc<Store>,
        detector: DetectorConfig,
        backend: Arc<dyn ModelBackend>,
        audit: Arc<AuditLog>,
    ) -> Self {
        assert_eq!(spec.scope.as_deref(), Some(store.name()), "agent scope must name its store");
        Self {
            spec,
            store,
            detector,
            backend,
            audit,
            step_budget: DEFAULT_STEP_BUDGET,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            busy: Mutex::new(()),
        }
    }

    pub fn with_step_budget(mut self, budget: usize) -> Self {
        self.step_budget = budget.max(1);
        self
    }

    pub fn with_prompt_budget(mut self, budget: usize) -> Self {
        self.prompt_budget = budget;
        self
    }

    pub fn id(&self) -> &str {
        &self.spec.agent_id
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn detector(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn schema(&self) -> ScopeSchema {
        let entities = self.store.list_entities();
        ScopeSchema {
            store_name: self.store.name().to_string(),
            kind: self.store.kind(),
            entity_count: entities.len(),
            entity_sample: entities.into_iter().take(12).collect(),
            metrics: metric_names(self.store.kind()).iter().map(|s| s.to_string()).collect(),
            coverage: self.store.time_coverage(),
        }
    }

    fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.spec.tool_whitelist.iter().filter_map(|t| tools::tool_schema(t)).collect()
    }

    /// Detects over the whole scope for `window` and broadcasts a report
    /// when the events escalate.
    pub fn tick(&self, window: Window, bus: &MessageBus) -> Result<TickOutcome, AgentError> {
        let _guard = self.busy.lock();
        let run = match detect_scope(&self.store, &self.detector, window, None, None) {
            Ok(r) => r,
            Err(e) => {
                self.audit_tick(window, 0, None, Some(e.clone()));
                return Err(AgentError::Detect(e));
            }
        };
        if run.evaluated == 0 && !run.skipped.is_empty() {
            let err = AgentError::InsufficientBaseline { skipped: run.skipped.len() };
            tracing::info!(agent = %self.id(), start = window.start, "tick skipped: {err}");
            self.audit_tick(window, 0, None, Some(err.to_string()));
            return Err(err);
        }
        if !escalates(&run.events) {
            self.audit_tick(window, run.events.len(), None, None);
            return Ok(TickOutcome { window, events: run.events, evaluated: run.evaluated, report: None });
        }
        let report = self.build_report(window, run.events.clone());
        self.audit_tick(window, report.events.len(), Some(report.report_id.clone()), None);
        if let Err(v) = bus.send(
            AgentMessage::report(&report, window.end)
                .with_evidence(vec![StoreRead { store: self.store.name().into(), tool: "tick".into() }]),
        ) {
            tracing::error!(agent = %self.id(), ?v, "own report failed isolation");
        }
        Ok(TickOutcome { window, events: run.events, evaluated: run.evaluated, report: Some(report) })
    }

    fn audit_tick(&self, window: Window, events: usize, report_id: Option<String>, error: Option<String>) {
        self.audit.record(self.id(), AuditEvent::Tick { window, events, report_id, error });
    }

    fn build_report(&self, window: Window, events: Vec<AnomalyEvent>) -> PatternReport {
        let mut keys: Vec<String> = events.iter().map(|e| e.entity_id.clone()).collect();
        keys.sort();
        keys.dedup();
        let mut summary = format!(
            "{} anomalies in {} during [{}, {}):",
            events.len(),
            self.store.name(),
            window.start,
            window.end
        );
        for e in &events {
            let _ = write!(
                summary,
                " {} {} {:?} {:?} (observed {:.3}, score {:.2});",
                e.entity_id, e.metric, e.direction, e.severity, e.observed, e.score
            );
        }
        PatternReport {
            report_id: format!("rpt-{}-{}", self.id(), window.start),
            agent_id: self.id().to_string(),
            db_kind: self.store.kind(),
            window,
            events,
            summary: clip_summary(&summary),
            correlation_keys: keys,
        }
    }

    /// Runs the tool loop for one question.
    pub fn handle_query(&self, question: &str, history: &[ChatTurn]) -> Result<QueryOutcome, AgentError> {
        if question.trim().is_empty() {
            return Err(AgentError::EmptyQuestion);
        }
        let _guard = self.busy.lock();
        let mut turns = assemble_prompt(&self.spec.role_prompt, &self.schema(), history, question, self.prompt_budget);
        let schemas = self.tool_schemas();
        let mut transcript = Vec::new();
        let mut last_text = String::new();
        for step in 1..=self.step_budget {
            let reply = self.backend.complete(&turns, &schemas)?;
            if reply.tool_calls.is_empty() {
                return Ok(QueryOutcome { answer: reply.content, partial: false, steps: step, transcript });
            }
            if !reply.content.is_empty() {
                last_text = reply.content.clone();
            }
            let calls = reply.tool_calls.clone();
            turns.push(reply);
            for call in calls {
                let entry = self.run_tool(step, call);
                turns.push(ChatTurn::tool(entry.result.clone()));
                transcript.push(entry);
            }
        }
        let mut answer = format!("Partial answer: step budget of {} model calls exhausted.", self.step_budget);
        if !last_text.is_empty() {
            answer.push(' ');
            answer.push_str(&last_text);
        }
        Ok(QueryOutcome { answer, partial: true, steps: self.step_budget, transcript })
    }

    fn run_tool(&self, step: usize, call: crate::llm::ToolCall) -> TranscriptEntry {
        let arguments = serde_json::Value::Object(call.arguments.clone());
        if !self.spec.tool_whitelist.contains(&call.tool_name) {
            self.audit.record(
                self.id(),
                AuditEvent::ToolCall { tool: call.tool_name.clone(), arguments, outcome: ToolOutcome::Denied, store_reads: vec![] },
            );
            let result = ToolResult {
                call_id: call.call_id.clone(),
                tool_name: call.tool_name.clone(),
                content: format!("tool-denied: `{}` is not available to agent `{}`", call.tool_name, self.id()),
                is_error: true,
            };
            return TranscriptEntry {
                agent_id: self.id().into(),
                step,
                call,
                result,
                outcome: ToolOutcome::Denied,
                store_reads: vec![],
                detection: None,
            };
        }
        let out = tools::execute(&self.store, &self.detector, &call);
        let store_reads = if out.read_store { vec![self.store.name().to_string()] } else { vec![] };
        let outcome = if out.is_error { ToolOutcome::Error } else { ToolOutcome::Ok };
        self.audit.record(
            self.id(),
            AuditEvent::ToolCall { tool: call.tool_name.clone(), arguments, outcome, store_reads: store_reads.clone() },
        );
        let result = ToolResult {
            call_id: call.call_id.clone(),
            tool_name: call.tool_name.clone(),
            content: out.content.to_string(),
            is_error: out.is_error,
        };
        TranscriptEntry {
            agent_id: self.id().into(),
            step,
            call,
            result,
            outcome,
            store_reads,
            detection: out.detection.map(|(window, evs)| DetectionSummary { window, events: evs.len() }),
        }
    }

    /// Answers the ask message `msg_id` from this agent's inbox, replying
    /// to its sender. Returns the outcome, or the error that prevented an
    /// answer.
    pub fn serve(&self, bus: &MessageBus, msg_id: u64, history: &[ChatTurn]) -> Result<QueryOutcome, AgentError> {
        let Some(msg) = bus.take_id(self.id(), msg_id) else {
            return Err(AgentError::Bus(format!("message {msg_id} not in inbox")));
        };
        let question = msg.as_text().unwrap_or_default();
        let outcome = self.handle_query(&question, history)?;
        let reply = AgentMessage::text(self.id(), &msg.sender, MessageKind::Answer, &outcome.answer, msg.ts)
            .with_evidence(outcome.evidence())
            .reply_to(msg_id);
        if bus.send(reply).is_err() {
            return Err(AgentError::Bus("answer rejected by isolation check".into()));
        }
        Ok(outcome)
    }
}
