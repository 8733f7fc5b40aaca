//! Telemetry record kinds and their derived forms.
//!
//! Three databases feed the system: interface counters, flow summaries and
//! optical power readings. Raw records are parsed from a line-delimited
//! `key=value` format (see [`format`]), interface counters are differenced
//! into [`RateSample`]s, and long rate streams can be folded into a bounded
//! number of [`ConsolidatedBucket`]s.

mod consolidate;
pub mod format;
mod rate;

pub use consolidate::{consolidate, Consolidation, ConsolidateError, ConsolidatedBucket, MetricAggregate};
pub use format::{format_record, parse_record, parse_stream, FieldError, FieldErrorKind, ParseError};
pub use rate::{counters_to_rate, rate_series, RateError, RateMetric, RateSample};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// The three database kinds. Each store holds exactly one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbKind {
    Interface,
    Flow,
    Optical,
}

impl DbKind {
    pub const ALL: [DbKind; 3] = [DbKind::Interface, DbKind::Flow, DbKind::Optical];

    /// Value of the `kind=` field in the line format.
    pub fn line_tag(self) -> &'static str {
        match self {
            DbKind::Interface => "iface",
            DbKind::Flow => "flow",
            DbKind::Optical => "optical",
        }
    }

    pub fn from_line_tag(tag: &str) -> Option<Self> {
        match tag {
            "iface" => Some(DbKind::Interface),
            "flow" => Some(DbKind::Flow),
            "optical" => Some(DbKind::Optical),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DbKind::Interface => "interface",
            DbKind::Flow => "flow",
            DbKind::Optical => "optical",
        }
    }

    /// Tag byte used in the store file header.
    pub fn file_tag(self) -> u8 {
        match self {
            DbKind::Interface => 1,
            DbKind::Flow => 2,
            DbKind::Optical => 3,
        }
    }

    pub fn from_file_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DbKind::Interface),
            2 => Some(DbKind::Flow),
            3 => Some(DbKind::Optical),
            _ => None,
        }
    }

    /// Lower layers first in causal order: optical problems explain
    /// interface symptoms, which explain flow symptoms.
    pub fn layer_rank(self) -> u8 {
        match self {
            DbKind::Optical => 3,
            DbKind::Interface => 2,
            DbKind::Flow => 1,
        }
    }
}

impl fmt::Display for DbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DbKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interface" | "iface" => Ok(DbKind::Interface),
            "flow" => Ok(DbKind::Flow),
            "optical" => Ok(DbKind::Optical),
            other => Err(format!("unknown database kind `{other}`")),
        }
    }
}

/// One poll of an interface's cumulative counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub timestamp: Timestamp,
    pub interface_id: String,
    pub pkts_in: u64,
    pub pkts_out: u64,
    pub octets_in: u64,
    pub octets_out: u64,
    pub errs_in: u64,
    pub errs_out: u64,
    pub speed_bps: u64,
    pub descr: String,
}

/// Summary of one network conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub start_ts: Timestamp,
    pub end_ts: Timestamp,
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    pub bytes: u64,
    pub packets: u64,
}

/// Transmit and receive light levels of a fiber port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalSample {
    pub timestamp: Timestamp,
    pub port_id: String,
    pub tx_power_dbm: f64,
    pub rx_power_dbm: f64,
}

/// Any raw telemetry record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Interface(TelemetrySample),
    Flow(FlowRecord),
    Optical(OpticalSample),
}

impl Record {
    pub fn kind(&self) -> DbKind {
        match self {
            Record::Interface(_) => DbKind::Interface,
            Record::Flow(_) => DbKind::Flow,
            Record::Optical(_) => DbKind::Optical,
        }
    }

    /// Time the record is indexed under. Flows are indexed by their start.
    pub fn timestamp(&self) -> Timestamp {
        match self {
            Record::Interface(s) => s.timestamp,
            Record::Flow(f) => f.start_ts,
            Record::Optical(o) => o.timestamp,
        }
    }

    /// Key the record is grouped under: interface id, flow source address,
    /// or optical port id.
    pub fn entity_id(&self) -> &str {
        match self {
            Record::Interface(s) => &s.interface_id,
            Record::Flow(f) => &f.src_addr,
            Record::Optical(o) => &o.port_id,
        }
    }
}

impl From<TelemetrySample> for Record {
    fn from(s: TelemetrySample) -> Self {
        Record::Interface(s)
    }
}

impl From<FlowRecord> for Record {
    fn from(f: FlowRecord) -> Self {
        Record::Flow(f)
    }
}

impl From<OpticalSample> for Record {
    fn from(o: OpticalSample) -> Self {
        Record::Optical(o)
    }
}
