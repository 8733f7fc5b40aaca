use super::scoped::{QueryOutcome, ScopedAgent};
use super::{
    AgentError, AgentMessage, AgentPlan, AgentSpec, MessageBus, MessageKind, PlanStep, StepStatus, TranscriptEntry,
};
use crate::correlate::TopologyMap;
use crate::detect::Window;
use crate::llm::{BackendError, ChatTurn, ModelBackend};
use crate::telemetry::{DbKind, Timestamp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// How far back (seconds before the newest report) reports count as recent.
pub const RECENT_REPORT_S: i64 = 24 * 3600;

/// Prefix of the user turn sent for planning.
pub const PLAN_PREFIX: &str = "PLAN:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanSource {
    /// The model produced a valid plan.
    Model,
    /// Keyword, entity and topology routing.
    Fallback,
    /// Reused from the session's earlier identical question.
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub agent_id: String,
    pub question: String,
    pub answer: Option<String>,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatedAnswer {
    pub answer: String,
    pub plan: AgentPlan,
    pub plan_source: PlanSource,
    /// Some steps failed or ran out of budget.
    pub partial: bool,
    pub findings: Vec<Finding>,
    pub evidence: Vec<TranscriptEntry>,
}

pub struct Coordinator {
    spec: AgentSpec,
    agents: Vec<Arc<ScopedAgent>>,
    backend: Arc<dyn ModelBackend>,
    bus: Arc<MessageBus>,
    topology: Arc<TopologyMap>,
    step_budget: usize,
}

#[derive(Deserialize)]
struct ModelPlan {
    steps: Vec<ModelStep>,
}

#[derive(Deserialize)]
struct ModelStep {
    agent: String,
    question: String,
}

fn vocabulary(kind: DbKind) -> &'static [&'static str] {
    match kind {
        DbKind::Interface => &[
            "interface", "interfaces", "iface", "ifaces", "packet", "packets", "pps", "bps", "bandwidth", "traffic",
            "throughput", "error", "errors", "eps", "crc", "link", "links", "uplink", "speed", "octets", "utilization",
            "booth", "booths", "connected", "flap", "flapping", "down",
        ],
        DbKind::Flow => &[
            "flow", "flows", "conversation", "conversations", "talker", "talkers", "source", "sources",
            "destination", "src", "dst", "address", "addresses", "ip", "protocol", "tcp", "udp", "bytes", "host",
            "hosts",
        ],
        DbKind::Optical => &[
            "optical", "optic", "optics", "fiber", "fibre", "light", "power", "dbm", "rx", "tx", "transceiver",
            "transceivers", "laser", "sfp", "attenuation",
        ],
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || matches!(c, '-' | '_' | '.' | ':')))
        .map(|t| t.trim_matches(|c| matches!(c, '.' | ':' | '-')).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn now_s() -> Timestamp {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

impl Coordinator {
    pub fn new(
        spec: AgentSpec,
        agents: Vec<Arc<ScopedAgent>>,
        backend: Arc<dyn ModelBackend>,
        bus: Arc<MessageBus>,
        topology: Arc<TopologyMap>,
        step_budget: usize,
    ) -> Self {
        Self { spec, agents, backend, bus, topology, step_budget: step_budget.max(1) }
    }

    pub fn id(&self) -> &str {
        &self.spec.agent_id
    }

    pub fn agents(&self) -> &[Arc<ScopedAgent>] {
        &self.agents
    }

    pub fn agent(&self, id: &str) -> Option<&Arc<ScopedAgent>> {
        self.agents.iter().find(|a| a.id() == id)
    }

    pub fn topology(&self) -> &TopologyMap {
        &self.topology
    }

    /// Plan ids hash the query and steps, so equal plans get equal ids.
    fn new_plan(&self, question: &str, steps: Vec<(String, String)>) -> AgentPlan {
        let mut h = crc32fast::Hasher::new();
        h.update(question.as_bytes());
        for (a, q) in &steps {
            h.update(&[0]);
            h.update(a.as_bytes());
            h.update(&[0]);
            h.update(q.as_bytes());
        }
        AgentPlan {
            plan_id: format!("plan-{:08x}", h.finalize()),
            query: question.to_string(),
            steps: steps
                .into_iter()
                .map(|(agent_id, question)| PlanStep { agent_id, question, status: StepStatus::Pending })
                .collect(),
        }
    }

    /// Asks the model for a plan; `None` when the reply is not a usable one.
    fn model_plan(&self, question: &str) -> Option<Vec<(String, String)>> {
        let mut system = self.spec.role_prompt.clone();
        system.push_str("\n\nAgents:\n");
        for a in &self.agents {
            let s = a.schema();
            system.push_str(&format!("- {} ({} data, {} entities)\n", a.id(), s.kind, s.entity_count));
        }
        let turns = vec![ChatTurn::system(system), ChatTurn::user(format!("{PLAN_PREFIX} {question}"))];
        let reply = match self.backend.complete(&turns, &[]) {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!(error = %e, "planning call failed, using fallback routing");
                return None;
            }
        };
        if !reply.tool_calls.is_empty() {
            return None;
        }
        let plan: ModelPlan = serde_json::from_str(reply.content.trim()).ok()?;
        let steps: Vec<(String, String)> = plan
            .steps
            .into_iter()
            .filter(|s| !s.question.trim().is_empty())
            .map(|s| (s.agent, s.question))
            .collect();
        (!steps.is_empty() && steps.iter().all(|(a, _)| self.agent(a).is_some())).then_some(steps)
    }

    /// Deterministic routing used when the model gives no plan.
    ///
    /// 1. Agents whose store holds an entity named in the question (booth
    ///    ids expand to their interfaces).
    /// 2. Agents with recent reports whose correlation keys meet the
    ///    topology neighborhood of the named entities.
    /// 3. Failing both, agents whose metric vocabulary matches a word.
    /// 4. Failing that, every agent.
    pub fn route(&self, question: &str) -> Vec<String> {
        let toks = tokens(question);
        let tokset: BTreeSet<&str> = toks.iter().map(String::as_str).collect();
        let mut named: BTreeSet<String> = BTreeSet::new();
        let mut by_agent: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for a in &self.agents {
            for e in a.store().list_entities() {
                if tokset.contains(e.to_lowercase().as_str()) {
                    named.insert(e.clone());
                    by_agent.entry(a.id()).or_default().insert(e);
                }
            }
        }
        for node in self.topology.nodes() {
            if tokset.contains(node.to_lowercase().as_str()) {
                named.insert(node.to_string());
                for iface in self.topology.booth_members(node) {
                    named.insert(iface.to_string());
                    for a in &self.agents {
                        if a.store().has_entity(iface) {
                            by_agent.entry(a.id()).or_default().insert(iface.to_string());
                        }
                    }
                }
            }
        }
        let mut selected: BTreeSet<String> = by_agent.keys().map(|s| s.to_string()).collect();

        if !named.is_empty() {
            let neighborhood = self.topology.expand(named.iter().map(String::as_str), 2);
            let reports = self.bus.recent_reports(Timestamp::MIN);
            let newest = reports.iter().map(|r| r.window.end).max().unwrap_or(0);
            for r in reports.iter().filter(|r| r.window.end > newest - RECENT_REPORT_S) {
                if r.correlation_keys.iter().any(|k| neighborhood.contains(k)) && self.agent(&r.agent_id).is_some() {
                    selected.insert(r.agent_id.clone());
                }
            }
        }
        if selected.is_empty() {
            for a in &self.agents {
                if vocabulary(a.store().kind()).iter().any(|w| tokset.contains(w)) {
                    selected.insert(a.id().to_string());
                }
            }
        }
        let order = |id: &str| self.agents.iter().position(|a| a.id() == id).unwrap_or(usize::MAX);
        let mut out: Vec<String> = if selected.is_empty() {
            self.agents.iter().map(|a| a.id().to_string()).collect()
        } else {
            selected.into_iter().collect()
        };
        // Lower layers first: optical before interface before flow.
        out.sort_by_key(|id| {
            let rank = self.agent(id).map_or(0, |a| a.store().kind().layer_rank());
            (std::cmp::Reverse(rank), order(id))
        });
        out
    }

    /// Plans, asks the agents, and merges their answers. `cached` reuses
    /// an earlier plan for the same question.
    pub fn coordinate(
        &self,
        question: &str,
        history: &[ChatTurn],
        cached: Option<&AgentPlan>,
    ) -> Result<CoordinatedAnswer, AgentError> {
        if question.trim().is_empty() {
            return Err(AgentError::EmptyQuestion);
        }
        if self.agents.is_empty() {
            return Err(AgentError::NoAgents);
        }
        let (mut plan, source) = match cached.filter(|p| p.query == question && !p.steps.is_empty()) {
            Some(p) => {
                let mut p = p.clone();
                p.steps.iter_mut().for_each(|s| s.status = StepStatus::Pending);
                (p, PlanSource::Cache)
            }
            None => match self.model_plan(question) {
                Some(steps) => (self.new_plan(question, steps), PlanSource::Model),
                None => {
                    let steps = self.route(question).into_iter().map(|a| (a, question.to_string())).collect();
                    (self.new_plan(question, steps), PlanSource::Fallback)
                }
            },
        };

        let runnable = plan.steps.len().min(self.step_budget);
        let results = self.run_steps(&plan.steps[..runnable], history);
        let mut findings = Vec::with_capacity(plan.steps.len());
        let mut evidence = Vec::new();
        let mut unreachable = 0;
        for (i, step) in plan.steps.iter_mut().enumerate() {
            let mut f = Finding {
                agent_id: step.agent_id.clone(),
                question: step.question.clone(),
                answer: None,
                partial: false,
                error: None,
            };
            match results.get(i) {
                None => {
                    step.status = StepStatus::Failed;
                    f.error = Some(format!("step budget of {} exhausted", self.step_budget));
                }
                Some(Ok(out)) => {
                    step.status = StepStatus::Done;
                    f.answer = Some(out.answer.clone());
                    f.partial = out.partial;
                    evidence.extend(out.transcript.iter().cloned());
                }
                Some(Err(e)) => {
                    step.status = StepStatus::Failed;
                    if matches!(e, AgentError::Backend(BackendError::Unreachable(_))) {
                        unreachable += 1;
                    }
                    f.error = Some(e.to_string());
                }
            }
            findings.push(f);
        }
        debug_assert!(plan.is_complete());
        if unreachable > 0 && unreachable == findings.len() {
            let msg = findings[0].error.clone().unwrap_or_default();
            return Err(AgentError::Backend(BackendError::Unreachable(msg)));
        }
        let partial = findings.iter().any(|f| f.answer.is_none() || f.partial);
        let answer = synthesize(&findings, &evidence);
        Ok(CoordinatedAnswer { answer, plan, plan_source: source, partial, findings, evidence })
    }

    /// Runs steps over the bus: distinct agents concurrently, steps for the
    /// same agent in plan order.
    fn run_steps(&self, steps: &[PlanStep], history: &[ChatTurn]) -> Vec<Result<QueryOutcome, AgentError>> {
        let mut by_agent: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in steps.iter().enumerate() {
            by_agent.entry(s.agent_id.as_str()).or_default().push(i);
        }
        let mut results: Vec<Option<Result<QueryOutcome, AgentError>>> = (0..steps.len()).map(|_| None).collect();
        let ts = now_s();
        std::thread::scope(|s| {
            let handles: Vec<_> = by_agent
                .into_iter()
                .map(|(agent_id, idx)| {
                    s.spawn(move || {
                        idx.into_iter()
                            .map(|i| (i, self.ask(agent_id, &steps[i].question, history, ts)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("step thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
        results.into_iter().map(|r| r.expect("every step ran")).collect()
    }

    fn ask(&self, agent_id: &str, question: &str, history: &[ChatTurn], ts: Timestamp) -> Result<QueryOutcome, AgentError> {
        let agent = self.agent(agent_id).ok_or_else(|| AgentError::Bus(format!("unknown agent `{agent_id}`")))?;
        let ask = AgentMessage::text(self.id(), agent_id, MessageKind::Ask, question, ts);
        let ask_id = self.bus.send(ask).map_err(|v| AgentError::Bus(format!("ask rejected: {v:?}")))?;
        let outcome = agent.serve(&self.bus, ask_id, history)?;
        let reply = self
            .bus
            .take_reply(self.id(), ask_id)
            .ok_or_else(|| AgentError::Bus(format!("no answer from `{agent_id}`")))?;
        let text = reply.as_text().unwrap_or_default();
        Ok(QueryOutcome { answer: text, ..outcome })
    }
}

/// Merges agent findings into one answer that names its sources.
pub fn synthesize(findings: &[Finding], evidence: &[TranscriptEntry]) -> String {
    let mut lines = Vec::new();
    let detections: Vec<(Window, usize)> =
        evidence.iter().filter_map(|t| t.detection.as_ref()).map(|d| (d.window, d.events)).collect();
    if !detections.is_empty() && detections.iter().all(|(_, n)| *n == 0) {
        let w = detections[0].0;
        lines.push(format!("No anomalies detected in the queried window [{}, {}).", w.start, w.end));
    }
    for f in findings {
        match &f.answer {
            Some(a) => lines.push(format!("[{}] {}", f.agent_id, a)),
            None => lines.push(format!(
                "[{}] no answer: {}",
                f.agent_id,
                f.error.as_deref().unwrap_or("unknown failure")
            )),
        }
    }
    let missing: Vec<&str> = findings.iter().filter(|f| f.answer.is_none()).map(|f| f.agent_id.as_str()).collect();
    if !missing.is_empty() {
        lines.push(format!("Partial answer: missing findings from {}.", missing.join(", ")));
    }
    lines.join("\n")
}
