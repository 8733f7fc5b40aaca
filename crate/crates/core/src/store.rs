//! Append-only per-database time-series stores.
//!
//! A [`Store`] holds the records of exactly one [`DbKind`]. Records are kept
//! in append order and indexed per entity by `(timestamp, sequence)`, so
//! late data is accepted and queries always come back sorted. Stores are
//! the isolation unit agents are scoped to.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! b"NWTS" | version: u16 | kind tag: u8 | { len: u32 | record line (UTF-8) }* | crc32(body): u32
//! ```
//!
//! The store name is the file stem.

use crate::telemetry::{
    format_record, parse_record, FieldError, rate_series, DbKind, RateMetric, Record, TelemetrySample, Timestamp,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

pub const FILE_MAGIC: &[u8; 4] = b"NWTS";
pub const FILE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("kind-mismatch: store holds {expected} records, got {got}")]
    KindMismatch { expected: DbKind, got: DbKind },
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] FieldError),
    #[error("unknown-metric: `{metric}` is not a {kind} metric")]
    UnknownMetric { kind: DbKind, metric: String },
    #[error("unknown-entity: `{0}`")]
    UnknownEntity(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("corrupt-file: {0}")]
    CorruptFile(String),
    #[error("version-mismatch: file version {found}, supported {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("storage-io-failure: {0}")]
    Io(#[from] io::Error),
}

/// A windowed read against one store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowQuery {
    #[serde(default)]
    pub entity_id: Option<String>,
    pub metric: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    #[serde(default)]
    pub step_s: Option<i64>,
}

impl WindowQuery {
    pub fn new(metric: impl Into<String>, t_start: Timestamp, t_end: Timestamp) -> Self {
        Self { entity_id: None, metric: metric.into(), t_start, t_end, step_s: None }
    }

    pub fn entity(mut self, entity: impl Into<String>) -> Self {
        self.entity_id = Some(entity.into());
        self
    }

    pub fn step(mut self, step_s: i64) -> Self {
        self.step_s = Some(step_s);
        self
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.t_end <= self.t_start {
            return Err(StoreError::InvalidQuery(format!(
                "t_end ({}) must be after t_start ({})",
                self.t_end, self.t_start
            )));
        }
        if matches!(self.step_s, Some(s) if s <= 0) {
            return Err(StoreError::InvalidQuery("step_s must be positive".into()));
        }
        Ok(())
    }
}

/// One value of a series. `count` is 1 for raw values and the number of
/// raw values averaged for resampled ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub ts: Timestamp,
    pub value: f64,
    pub count: u32,
}

impl Point {
    pub fn raw(ts: Timestamp, value: f64) -> Self {
        Self { ts, value, count: 1 }
    }
}

/// Metric names a store of `kind` answers queries for.
pub fn metric_names(kind: DbKind) -> &'static [&'static str] {
    match kind {
        DbKind::Interface => &[
            "pps_in", "pps_out", "bps_in", "bps_out", "eps_in", "eps_out", "pkts_in", "pkts_out", "octets_in",
            "octets_out", "errs_in", "errs_out", "speed_bps",
        ],
        DbKind::Flow => &["bytes", "packets", "duration_s"],
        DbKind::Optical => &["tx_power_dbm", "rx_power_dbm"],
    }
}

/// How a metric's value is obtained from records.
#[derive(Debug, Clone, Copy)]
enum Extractor {
    Rate(RateMetric),
    Field(fn(&Record) -> f64),
}

fn extractor(kind: DbKind, metric: &str) -> Option<Extractor> {
    if !metric_names(kind).contains(&metric) {
        return None;
    }
    if kind == DbKind::Interface {
        if let Ok(m) = metric.parse::<RateMetric>() {
            return Some(Extractor::Rate(m));
        }
    }
    let f: fn(&Record) -> f64 = match (kind, metric) {
        (DbKind::Interface, "pkts_in") => |r| iface(r).pkts_in as f64,
        (DbKind::Interface, "pkts_out") => |r| iface(r).pkts_out as f64,
        (DbKind::Interface, "octets_in") => |r| iface(r).octets_in as f64,
        (DbKind::Interface, "octets_out") => |r| iface(r).octets_out as f64,
        (DbKind::Interface, "errs_in") => |r| iface(r).errs_in as f64,
        (DbKind::Interface, "errs_out") => |r| iface(r).errs_out as f64,
        (DbKind::Interface, "speed_bps") => |r| iface(r).speed_bps as f64,
        (DbKind::Flow, "bytes") => |r| match r {
            Record::Flow(f) => f.bytes as f64,
            _ => unreachable!(),
        },
        (DbKind::Flow, "packets") => |r| match r {
            Record::Flow(f) => f.packets as f64,
            _ => unreachable!(),
        },
        (DbKind::Flow, "duration_s") => |r| match r {
            Record::Flow(f) => (f.end_ts - f.start_ts) as f64,
            _ => unreachable!(),
        },
        (DbKind::Optical, "tx_power_dbm") => |r| match r {
            Record::Optical(o) => o.tx_power_dbm,
            _ => unreachable!(),
        },
        (DbKind::Optical, "rx_power_dbm") => |r| match r {
            Record::Optical(o) => o.rx_power_dbm,
            _ => unreachable!(),
        },
        _ => return None,
    };
    Some(Extractor::Field(f))
}

fn iface(r: &Record) -> &TelemetrySample {
    match r {
        Record::Interface(s) => s,
        _ => unreachable!("interface metric on non-interface record"),
    }
}

#[derive(Debug, Default)]
struct Inner {
    records: Vec<Record>,
    /// entity -> (timestamp, record sequence), sorted.
    index: BTreeMap<String, Vec<(Timestamp, u32)>>,
}

impl Inner {
    fn push(&mut self, record: Record) {
        let seq = self.records.len() as u32;
        let key = (record.timestamp(), seq);
        let slot = self.index.entry(record.entity_id().to_string()).or_default();
        if slot.last().is_none_or(|last| *last <= key) {
            slot.push(key);
        } else {
            let pos = slot.partition_point(|k| *k <= key);
            slot.insert(pos, key);
        }
        self.records.push(record);
    }

    /// Points of one entity in `[t_start, t_end)`, ascending.
    fn entity_points(&self, entity: &str, ex: Extractor, t_start: Timestamp, t_end: Timestamp) -> Vec<Point> {
        let Some(slot) = self.index.get(entity) else { return Vec::new() };
        let lo = slot.partition_point(|(ts, _)| *ts < t_start);
        let hi = slot.partition_point(|(ts, _)| *ts < t_end);
        match ex {
            Extractor::Field(f) => slot[lo..hi]
                .iter()
                .map(|&(ts, seq)| Point::raw(ts, f(&self.records[seq as usize])))
                .collect(),
            Extractor::Rate(metric) => {
                // Start from the first poll of the run of equal timestamps
                // just before the window so the first in-window rate has
                // the same predecessor as in a full-series derivation.
                let mut from = lo;
                if from > 0 {
                    from -= 1;
                    let ts = slot[from].0;
                    while from > 0 && slot[from - 1].0 == ts {
                        from -= 1;
                    }
                }
                let samples = slot[from..hi].iter().map(|&(_, seq)| iface(&self.records[seq as usize]));
                rate_series(samples)
                    .into_iter()
                    .filter(|r| !r.reset && r.timestamp >= t_start)
                    .map(|r| Point::raw(r.timestamp, metric.value(&r)))
                    .collect()
            }
        }
    }
}

/// An append-only store for one database kind.
#[derive(Debug)]
pub struct Store {
    kind: DbKind,
    name: String,
    inner: RwLock<Inner>,
}

impl Store {
    pub fn new(kind: DbKind, name: impl Into<String>) -> Self {
        Self { kind, name: name.into(), inner: RwLock::new(Inner::default()) }
    }

    pub fn kind(&self) -> DbKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn record_count(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn append(&self, record: Record) -> Result<(), StoreError> {
        if record.kind() != self.kind {
            return Err(StoreError::KindMismatch { expected: self.kind, got: record.kind() });
        }
        record.validate()?;
        self.inner.write().push(record);
        Ok(())
    }

    /// Appends a batch under one lock; either every record is appended or,
    /// on a kind mismatch or invalid record, none is.
    pub fn append_all(&self, records: impl IntoIterator<Item = Record>) -> Result<usize, StoreError> {
        let records: Vec<Record> = records.into_iter().collect();
        if let Some(bad) = records.iter().find(|r| r.kind() != self.kind) {
            return Err(StoreError::KindMismatch { expected: self.kind, got: bad.kind() });
        }
        for r in &records {
            r.validate()?;
        }
        let n = records.len();
        let mut inner = self.inner.write();
        for r in records {
            inner.push(r);
        }
        Ok(n)
    }

    pub fn list_entities(&self) -> Vec<String> {
        self.inner.read().index.keys().cloned().collect()
    }

    pub fn has_entity(&self, entity: &str) -> bool {
        self.inner.read().index.contains_key(entity)
    }

    /// Earliest and latest record timestamps.
    pub fn time_coverage(&self) -> Option<(Timestamp, Timestamp)> {
        let inner = self.inner.read();
        let mut range: Option<(Timestamp, Timestamp)> = None;
        for slot in inner.index.values() {
            if let (Some(first), Some(last)) = (slot.first(), slot.last()) {
                range = Some(match range {
                    None => (first.0, last.0),
                    Some((lo, hi)) => (lo.min(first.0), hi.max(last.0)),
                });
            }
        }
        range
    }

    /// Values with `t_start <= ts < t_end`, ascending by timestamp. Without
    /// an entity filter, values of all entities are merged and ties are
    /// ordered by entity id, then append order. With `step_s`, values are
    /// averaged onto the grid `t_start + k * step_s`.
    pub fn query_window(&self, q: &WindowQuery) -> Result<Vec<Point>, StoreError> {
        q.validate()?;
        let ex = extractor(self.kind, &q.metric)
            .ok_or_else(|| StoreError::UnknownMetric { kind: self.kind, metric: q.metric.clone() })?;
        let inner = self.inner.read();
        let points = match &q.entity_id {
            Some(entity) => {
                if !inner.index.contains_key(entity) {
                    return Err(StoreError::UnknownEntity(entity.clone()));
                }
                inner.entity_points(entity, ex, q.t_start, q.t_end)
            }
            None => {
                // BTreeMap iteration is already in entity order, so a stable
                // sort on timestamp gives (ts, entity, seq) ordering.
                let mut all: Vec<Point> = inner
                    .index
                    .keys()
                    .flat_map(|e| inner.entity_points(e, ex, q.t_start, q.t_end))
                    .collect();
                all.sort_by_key(|p| p.ts);
                all
            }
        };
        drop(inner);
        Ok(match q.step_s {
            Some(step) => resample(&points, q.t_start, step),
            None => points,
        })
    }

    /// A copy of every record in append order.
    pub fn snapshot(&self) -> Vec<Record> {
        self.inner.read().records.clone()
    }

    /// Writes the store to `path` atomically (temp file then rename).
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let inner = self.inner.read();
        let mut body = Vec::with_capacity(inner.records.len() * 160);
        for r in &inner.records {
            let line = format_record(r);
            body.extend_from_slice(&(line.len() as u32).to_le_bytes());
            body.extend_from_slice(line.as_bytes());
        }
        drop(inner);
        let mut buf = Vec::with_capacity(body.len() + 11);
        buf.extend_from_slice(FILE_MAGIC);
        buf.extend_from_slice(&FILE_VERSION.to_le_bytes());
        buf.push(self.kind.file_tag());
        buf.extend_from_slice(&body);
        buf.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());

        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn open(path: &Path) -> Result<Store, StoreError> {
        let bytes = fs::read(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("store").to_string();
        Self::decode(&bytes, name)
    }

    /// Opens `path`, or creates (and persists) an empty store of `kind`
    /// when the file does not exist yet.
    pub fn open_or_create(path: &Path, kind: DbKind) -> Result<Store, StoreError> {
        if path.exists() {
            let store = Self::open(path)?;
            if store.kind != kind {
                return Err(StoreError::KindMismatch { expected: kind, got: store.kind });
            }
            return Ok(store);
        }
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("store").to_string();
        let store = Store::new(kind, name);
        store.persist(path)?;
        Ok(store)
    }

    fn decode(bytes: &[u8], name: String) -> Result<Store, StoreError> {
        if bytes.len() < 11 || &bytes[..4] != FILE_MAGIC {
            return Err(StoreError::CorruptFile("missing NWTS header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FILE_VERSION {
            return Err(StoreError::VersionMismatch { found: version, supported: FILE_VERSION });
        }
        let kind = DbKind::from_file_tag(bytes[6])
            .ok_or_else(|| StoreError::CorruptFile(format!("unknown kind tag {}", bytes[6])))?;
        let body = &bytes[7..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(StoreError::CorruptFile("checksum mismatch".into()));
        }
        let store = Store::new(kind, name);
        {
            let mut inner = store.inner.write();
            let mut pos = 0;
            while pos < body.len() {
                let len_bytes = body
                    .get(pos..pos + 4)
                    .ok_or_else(|| StoreError::CorruptFile(format!("truncated length at offset {pos}")))?;
                let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
                pos += 4;
                let raw = body
                    .get(pos..pos + len)
                    .ok_or_else(|| StoreError::CorruptFile(format!("truncated record at offset {pos}")))?;
                let line = std::str::from_utf8(raw)
                    .map_err(|_| StoreError::CorruptFile(format!("invalid UTF-8 at offset {pos}")))?;
                let record = parse_record(line, Some(kind))
                    .map_err(|e| StoreError::CorruptFile(format!("record at offset {pos}: {e}")))?;
                inner.push(record);
                pos += len;
            }
        }
        Ok(store)
    }
}

/// Averages points onto the grid anchored at `origin`.
fn resample(points: &[Point], origin: Timestamp, step: i64) -> Vec<Point> {
    let mut acc: BTreeMap<Timestamp, (f64, u32)> = BTreeMap::new();
    for p in points {
        let slot = origin + (p.ts - origin).div_euclid(step) * step;
        let e = acc.entry(slot).or_insert((0.0, 0));
        e.0 += p.value * p.count as f64;
        e.1 += p.count;
    }
    acc.into_iter()
        .map(|(ts, (sum, count))| Point { ts, value: sum / count as f64, count })
        .collect()
}
