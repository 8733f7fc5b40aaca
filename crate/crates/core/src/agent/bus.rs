use super::audit::{AuditEvent, AuditLog};
use super::isolation::{enforce_isolation, ScopeRegistry, Verdict};
use super::{AgentMessage, PatternReport, Recipient};
use crate::telemetry::Timestamp;
use parking_lot::{Mutex, RwLock};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

const LOG_CAP: usize = 10_000;

#[derive(Default)]
struct Inner {
    next_id: u64,
    log: VecDeque<AgentMessage>,
    inboxes: BTreeMap<String, VecDeque<AgentMessage>>,
}

/// In-process message bus. Every message is checked by
/// [`enforce_isolation`]; violations are audited and dropped. Directed
/// messages land in the recipient's inbox in send order; broadcasts are
/// kept only in the shared log.
pub struct MessageBus {
    audit: Arc<AuditLog>,
    scopes: RwLock<ScopeRegistry>,
    inner: Mutex<Inner>,
}

impl MessageBus {
    pub fn new(audit: Arc<AuditLog>) -> Self {
        Self { audit, scopes: RwLock::new(ScopeRegistry::new()), inner: Mutex::new(Inner::default()) }
    }

    pub fn register(&self, agent_id: &str, scope: Option<&str>) {
        self.scopes.write().insert(agent_id.to_string(), scope.map(str::to_string));
    }

    pub fn scopes(&self) -> ScopeRegistry {
        self.scopes.read().clone()
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    /// Returns the assigned message id, or the violation.
    pub fn send(&self, mut msg: AgentMessage) -> Result<u64, Verdict> {
        let verdict = enforce_isolation(&msg, &self.scopes.read());
        let mut inner = self.inner.lock();
        inner.next_id += 1;
        msg.msg_id = inner.next_id;
        let recipient = match &msg.recipient {
            Recipient::Agent(a) => a.clone(),
            Recipient::Broadcast => "*".to_string(),
        };
        let reasons = match &verdict {
            Verdict::Pass => Vec::new(),
            Verdict::Violation(r) => r.clone(),
        };
        self.audit.record(
            &msg.sender,
            AuditEvent::Message {
                msg_id: msg.msg_id,
                sender: msg.sender.clone(),
                recipient: recipient.clone(),
                kind: msg.kind,
                verdict: verdict.label().to_string(),
                reasons,
            },
        );
        if !verdict.is_pass() {
            tracing::warn!(sender = %msg.sender, msg_id = msg.msg_id, "isolation violation, message dropped");
            return Err(verdict);
        }
        let id = msg.msg_id;
        if let Recipient::Agent(to) = &msg.recipient {
            inner.inboxes.entry(to.clone()).or_default().push_back(msg.clone());
        }
        if inner.log.len() == LOG_CAP {
            inner.log.pop_front();
        }
        inner.log.push_back(msg);
        Ok(id)
    }

    /// Oldest pending message for `agent`.
    pub fn take(&self, agent: &str) -> Option<AgentMessage> {
        self.inner.lock().inboxes.get_mut(agent)?.pop_front()
    }

    /// Removes message `msg_id` from `agent`'s inbox.
    pub fn take_id(&self, agent: &str, msg_id: u64) -> Option<AgentMessage> {
        let mut inner = self.inner.lock();
        let inbox = inner.inboxes.get_mut(agent)?;
        let pos = inbox.iter().position(|m| m.msg_id == msg_id)?;
        inbox.remove(pos)
    }

    /// Removes and returns the reply to message `msg_id` from `agent`'s inbox.
    pub fn take_reply(&self, agent: &str, msg_id: u64) -> Option<AgentMessage> {
        let mut inner = self.inner.lock();
        let inbox = inner.inboxes.get_mut(agent)?;
        let pos = inbox.iter().position(|m| m.in_reply_to == Some(msg_id))?;
        inbox.remove(pos)
    }

    pub fn pending(&self, agent: &str) -> usize {
        self.inner.lock().inboxes.get(agent).map_or(0, VecDeque::len)
    }

    /// Delivered messages, oldest first (bounded history).
    pub fn messages(&self) -> Vec<AgentMessage> {
        self.inner.lock().log.iter().cloned().collect()
    }

    /// Reports whose window ends after `since`.
    pub fn recent_reports(&self, since: Timestamp) -> Vec<PatternReport> {
        self.inner
            .lock()
            .log
            .iter()
            .filter_map(AgentMessage::as_report)
            .filter(|r| r.window.end > since)
            .collect()
    }
}
