//! Chat sessions persisted to an append-only JSON-lines log.

use netagent_core::agent::AgentPlan;
use netagent_core::llm::ChatTurn;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub seq: u64,
    pub ts: i64,
    pub turn: ChatTurn,
    /// A user turn whose answer failed (backend unreachable).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unanswered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub created_ts: i64,
    pub last_activity_ts: i64,
    pub turns: Vec<SessionTurn>,
    /// Plan of the latest answered question, reused when it is asked again.
    #[serde(default)]
    pub plan: Option<AgentPlan>,
}

impl Session {
    /// User and assistant text turns, oldest first, for prompt history.
    pub fn history(&self) -> Vec<ChatTurn> {
        use netagent_core::llm::Role;
        self.turns
            .iter()
            .filter(|t| !t.unanswered)
            .filter(|t| t.turn.role == Role::User || (t.turn.role == Role::Assistant && t.turn.tool_calls.is_empty()))
            .map(|t| t.turn.clone())
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum LogEntry {
    Create { session_id: String, ts: i64 },
    Turn { session_id: String, #[serde(flatten)] turn: SessionTurn },
    Plan { session_id: String, plan: AgentPlan },
}

pub struct SessionStore {
    path: PathBuf,
    file: Mutex<File>,
    sessions: Mutex<BTreeMap<String, Session>>,
    /// One completion at a time per session.
    busy: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<()>>>>,
    expiry_s: i64,
}

impl SessionStore {
    /// Replays the log at `path`, creating it if missing. A torn final line
    /// (crash mid-write) is skipped.
    pub fn open(path: &Path, expiry_s: i64) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut sessions: BTreeMap<String, Session> = BTreeMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    Err(e) => {
                        tracing::warn!(line = i + 1, error = %e, "skipping unreadable session log line");
                        continue;
                    }
                };
                match entry {
                    LogEntry::Create { session_id, ts } => {
                        sessions.insert(
                            session_id.clone(),
                            Session { session_id, created_ts: ts, last_activity_ts: ts, turns: vec![], plan: None },
                        );
                    }
                    LogEntry::Turn { session_id, turn } => {
                        if let Some(s) = sessions.get_mut(&session_id) {
                            s.last_activity_ts = s.last_activity_ts.max(turn.ts);
                            s.turns.push(turn);
                        }
                    }
                    LogEntry::Plan { session_id, plan } => {
                        if let Some(s) = sessions.get_mut(&session_id) {
                            s.plan = Some(plan);
                        }
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        // Terminate a torn final line so the next entry starts cleanly.
        let len = file.metadata()?.len();
        if len > 0 {
            let bytes = std::fs::read(path)?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            sessions: Mutex::new(sessions),
            busy: Mutex::new(BTreeMap::new()),
            expiry_s,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&self, entry: &LogEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("log entries serialize");
        line.push('\n');
        let mut f = self.file.lock();
        f.write_all(line.as_bytes())?;
        f.flush()
    }

    pub fn create(&self, now: i64) -> std::io::Result<String> {
        let session_id = format!("s-{:016x}", rand::random::<u64>());
        self.write(&LogEntry::Create { session_id: session_id.clone(), ts: now })?;
        self.sessions.lock().insert(
            session_id.clone(),
            Session { session_id: session_id.clone(), created_ts: now, last_activity_ts: now, turns: vec![], plan: None },
        );
        Ok(session_id)
    }

    fn expired(&self, s: &Session, now: i64) -> bool {
        now - s.last_activity_ts > self.expiry_s
    }

    /// The session, unless unknown or idle past expiry.
    pub fn get(&self, id: &str, now: i64) -> Option<Session> {
        let mut sessions = self.sessions.lock();
        let s = sessions.get(id)?;
        if self.expired(s, now) {
            sessions.remove(id);
            return None;
        }
        Some(s.clone())
    }

    /// Appends turns with consecutive sequence numbers.
    pub fn append(&self, id: &str, turns: Vec<(ChatTurn, bool)>, now: i64) -> std::io::Result<()> {
        let mut sessions = self.sessions.lock();
        let Some(s) = sessions.get_mut(id) else {
            return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("session {id}")));
        };
        for (turn, unanswered) in turns {
            let seq = s.turns.last().map_or(1, |t| t.seq + 1);
            let st = SessionTurn { seq, ts: now, turn, unanswered };
            self.write(&LogEntry::Turn { session_id: id.to_string(), turn: st.clone() })?;
            s.turns.push(st);
        }
        s.last_activity_ts = now;
        Ok(())
    }

    pub fn set_plan(&self, id: &str, plan: AgentPlan) -> std::io::Result<()> {
        self.write(&LogEntry::Plan { session_id: id.to_string(), plan: plan.clone() })?;
        if let Some(s) = self.sessions.lock().get_mut(id) {
            s.plan = Some(plan);
        }
        Ok(())
    }

    pub fn lock_handle(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.busy.lock().entry(id.to_string()).or_default().clone()
    }

    /// Drops sessions idle past expiry; returns how many.
    pub fn purge(&self, now: i64) -> usize {
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        sessions.retain(|_, s| now - s.last_activity_ts <= self.expiry_s);
        let gone = before - sessions.len();
        if gone > 0 {
            let live: Vec<String> = sessions.keys().cloned().collect();
            self.busy.lock().retain(|k, _| live.contains(k));
        }
        gone
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_restores_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let store = SessionStore::open(&path, 100).unwrap();
        let id = store.create(10).unwrap();
        store.append(&id, vec![(ChatTurn::user("hi"), false), (ChatTurn::assistant("hello"), false)], 11).unwrap();
        store.append(&id, vec![(ChatTurn::user("again"), true)], 12).unwrap();
        let before = store.get(&id, 12).unwrap();
        assert_eq!(before.turns.iter().map(|t| t.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(before.history().len(), 2);
        drop(store);

        // Torn trailing write.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"turn\",\"sess").unwrap();
        let reopened = SessionStore::open(&path, 100).unwrap();
        assert_eq!(reopened.get(&id, 12).unwrap(), before);
        assert!(reopened.get(&id, 200).is_none());
    }

    #[test]
    fn sequence_numbers_increase_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let id = {
            let store = SessionStore::open(&path, 1000).unwrap();
            let id = store.create(1).unwrap();
            for i in 0..5 {
                store.append(&id, vec![(ChatTurn::user(format!("q{i}")), false)], 2 + i).unwrap();
            }
            id
        };
        let store = SessionStore::open(&path, 1000).unwrap();
        let before = store.get(&id, 10).unwrap().turns;
        store.append(&id, vec![(ChatTurn::assistant("a"), false), (ChatTurn::user("b"), false)], 11).unwrap();
        let after = store.get(&id, 11).unwrap().turns;
        assert_eq!(&after[..before.len()], &before[..], "earlier turns rewritten");
        assert!(after.windows(2).all(|w| w[0].seq < w[1].seq));
        assert_eq!(after.len(), 7);
    }
}
