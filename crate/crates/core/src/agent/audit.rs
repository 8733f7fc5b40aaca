//! Append-only audit trail with monotonic sequence numbers.
//!
//! Records are kept in memory (bounded) and, when a sink path is given,
//! appended to a line-delimited JSON file.

use super::MessageKind;
use crate::detect::Window;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

const MEMORY_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolOutcome {
    Ok,
    Denied,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Message {
        msg_id: u64,
        sender: String,
        recipient: String,
        kind: MessageKind,
        verdict: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        reasons: Vec<String>,
    },
    ToolCall {
        tool: String,
        arguments: Value,
        outcome: ToolOutcome,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        store_reads: Vec<String>,
    },
    Tick {
        window: Window,
        events: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub actor: String,
    #[serde(flatten)]
    pub event: AuditEvent,
}

struct Inner {
    next_seq: u64,
    records: VecDeque<AuditRecord>,
    sink: Option<File>,
}

pub struct AuditLog {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("path", &self.path).finish()
    }
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self { inner: Mutex::new(Inner { next_seq: 1, records: VecDeque::new(), sink: None }), path: None }
    }

    /// Appends to `path`, continuing the sequence of any existing records.
    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let mut next_seq = 1;
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                if let Ok(rec) = serde_json::from_str::<AuditRecord>(&line?) {
                    next_seq = next_seq.max(rec.seq + 1);
                }
            }
        }
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(Inner { next_seq, records: VecDeque::new(), sink: Some(sink) }),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn record(&self, actor: &str, event: AuditEvent) -> u64 {
        let mut inner = self.inner.lock();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let rec = AuditRecord { seq, actor: actor.to_string(), event };
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&rec).expect("audit record serializes");
            if let Err(e) = writeln!(sink, "{line}") {
                tracing::warn!(error = %e, "audit sink write failed");
            }
        }
        if inner.records.len() == MEMORY_CAP {
            inner.records.pop_front();
        }
        inner.records.push_back(rec);
        seq
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.inner.lock().records.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flush(&self) -> std::io::Result<()> {
        match self.inner.lock().sink.as_mut() {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}
