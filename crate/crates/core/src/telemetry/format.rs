//! Line-delimited `key=value` telemetry format.
//!
//! Every record is one UTF-8 line: `kind=<iface|flow|optical>` followed by
//! `key=value` pairs separated by single spaces.
//!
//! ```text
//! kind=iface ts=1712000000 if=booth12-eth0 pkts_in=182 pkts_out=44 octets_in=120031 octets_out=9920 errs_in=0 errs_out=0 speed=10000000000 descr=Booth12-Uplink
//! kind=flow start_ts=1712000000 end_ts=1712000030 src_addr=10.0.12.5 dst_addr=10.0.0.1 src_port=51000 dst_port=443 proto=6 bytes=91000 packets=70
//! kind=optical ts=1712000000 port=opt-01 tx_power_dbm=-1.5 rx_power_dbm=-4.25
//! ```
//!
//! String values percent-escape `%`, space, tab, CR and LF so that any
//! string survives a format/parse round trip.

use super::{DbKind, FlowRecord, OpticalSample, Record, TelemetrySample, Timestamp};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldErrorKind {
    /// The field is missing, duplicated, unknown or does not parse.
    Malformed,
    /// The field parsed but the record violates a type invariant.
    InvariantViolation,
}

/// A record-level error naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: field `{field}`: {message}", match .kind { FieldErrorKind::Malformed => "malformed-line", FieldErrorKind::InvariantViolation => "invariant-violation" })]
pub struct FieldError {
    pub field: String,
    pub kind: FieldErrorKind,
    pub message: String,
}

impl FieldError {
    fn malformed(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            kind: FieldErrorKind::Malformed,
            message: message.into(),
        }
    }

    fn invariant(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            kind: FieldErrorKind::InvariantViolation,
            message: message.into(),
        }
    }
}

/// A [`FieldError`] located at a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {error}")]
pub struct ParseError {
    pub line: usize,
    pub error: FieldError,
}

const IFACE_FIELDS: &[&str] = &[
    "ts", "if", "pkts_in", "pkts_out", "octets_in", "octets_out", "errs_in", "errs_out", "speed", "descr",
];
const FLOW_FIELDS: &[&str] = &[
    "start_ts", "end_ts", "src_addr", "dst_addr", "src_port", "dst_port", "proto", "bytes", "packets",
];
const OPTICAL_FIELDS: &[&str] = &["ts", "port", "tx_power_dbm", "rx_power_dbm"];

fn field_names(kind: DbKind) -> &'static [&'static str] {
    match kind {
        DbKind::Interface => IFACE_FIELDS,
        DbKind::Flow => FLOW_FIELDS,
        DbKind::Optical => OPTICAL_FIELDS,
    }
}

/// Parses one record line. When `expected` is given the line's `kind=` tag
/// must match it.
pub fn parse_record(line: &str, expected: Option<DbKind>) -> Result<Record, FieldError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut tokens = line.split(' ');
    let first = tokens.next().unwrap_or_default();
    let tag = first
        .strip_prefix("kind=")
        .ok_or_else(|| FieldError::malformed("kind", "line must start with `kind=`"))?;
    let kind = DbKind::from_line_tag(tag)
        .ok_or_else(|| FieldError::malformed("kind", format!("unknown kind `{tag}`")))?;
    if let Some(expected) = expected {
        if expected != kind {
            return Err(FieldError::malformed(
                "kind",
                format!("expected `{}`, found `{}`", expected.line_tag(), tag),
            ));
        }
    }

    let allowed = field_names(kind);
    let mut fields: HashMap<&str, &str> = HashMap::with_capacity(allowed.len());
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| FieldError::malformed(token, "expected `key=value`"))?;
        if !allowed.contains(&key) {
            return Err(FieldError::malformed(key, "unknown field"));
        }
        if fields.insert(key, value).is_some() {
            return Err(FieldError::malformed(key, "duplicate field"));
        }
    }
    let fields = Fields(fields);

    match kind {
        DbKind::Interface => {
            let sample = TelemetrySample {
                timestamp: fields.timestamp("ts")?,
                interface_id: fields.id("if")?,
                pkts_in: fields.uint("pkts_in")?,
                pkts_out: fields.uint("pkts_out")?,
                octets_in: fields.uint("octets_in")?,
                octets_out: fields.uint("octets_out")?,
                errs_in: fields.uint("errs_in")?,
                errs_out: fields.uint("errs_out")?,
                speed_bps: fields.uint("speed")?,
                descr: fields.text("descr")?,
            };
            Ok(Record::Interface(sample))
        }
        DbKind::Flow => {
            let flow = FlowRecord {
                start_ts: fields.timestamp("start_ts")?,
                end_ts: fields.timestamp("end_ts")?,
                src_addr: fields.id("src_addr")?,
                dst_addr: fields.id("dst_addr")?,
                src_port: fields.parse("src_port")?,
                dst_port: fields.parse("dst_port")?,
                proto: fields.parse("proto")?,
                bytes: fields.uint("bytes")?,
                packets: fields.uint("packets")?,
            };
            let rec = Record::Flow(flow);
            rec.validate()?;
            Ok(rec)
        }
        DbKind::Optical => {
            let sample = OpticalSample {
                timestamp: fields.timestamp("ts")?,
                port_id: fields.id("port")?,
                tx_power_dbm: fields.real("tx_power_dbm")?,
                rx_power_dbm: fields.real("rx_power_dbm")?,
            };
            Ok(Record::Optical(sample))
        }
    }
}

impl Record {
    /// Checks the type invariants a parsed record is guaranteed to hold, for
    /// records built in code.
    pub fn validate(&self) -> Result<(), FieldError> {
        fn ts(name: &str, v: Timestamp) -> Result<(), FieldError> {
            if v <= 0 {
                return Err(FieldError::invariant(name, "timestamp must be positive"));
            }
            Ok(())
        }
        fn id(name: &str, v: &str) -> Result<(), FieldError> {
            if v.is_empty() {
                return Err(FieldError::malformed(name, "empty identifier"));
            }
            Ok(())
        }
        fn real(name: &str, v: f64) -> Result<(), FieldError> {
            if !v.is_finite() {
                return Err(FieldError::invariant(name, "value must be finite"));
            }
            Ok(())
        }
        match self {
            Record::Interface(s) => {
                ts("ts", s.timestamp)?;
                id("if", &s.interface_id)
            }
            Record::Flow(f) => {
                ts("start_ts", f.start_ts)?;
                ts("end_ts", f.end_ts)?;
                id("src_addr", &f.src_addr)?;
                id("dst_addr", &f.dst_addr)?;
                if f.end_ts < f.start_ts {
                    return Err(FieldError::invariant("end_ts", "end_ts precedes start_ts"));
                }
                if f.bytes > 0 && f.packets == 0 {
                    return Err(FieldError::invariant("packets", "bytes > 0 requires packets >= 1"));
                }
                Ok(())
            }
            Record::Optical(o) => {
                ts("ts", o.timestamp)?;
                id("port", &o.port_id)?;
                real("tx_power_dbm", o.tx_power_dbm)?;
                real("rx_power_dbm", o.rx_power_dbm)
            }
        }
    }
}

struct Fields<'a>(HashMap<&'a str, &'a str>);

impl Fields<'_> {
    fn raw(&self, name: &str) -> Result<&str, FieldError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| FieldError::malformed(name, "missing field"))
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T, FieldError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name)?;
        raw.parse()
            .map_err(|e| FieldError::malformed(name, format!("`{raw}`: {e}")))
    }

    fn uint(&self, name: &str) -> Result<u64, FieldError> {
        self.parse(name)
    }

    fn timestamp(&self, name: &str) -> Result<Timestamp, FieldError> {
        let ts: Timestamp = self.parse(name)?;
        if ts <= 0 {
            return Err(FieldError::invariant(name, "timestamp must be positive"));
        }
        Ok(ts)
    }

    fn real(&self, name: &str) -> Result<f64, FieldError> {
        let v: f64 = self.parse(name)?;
        if !v.is_finite() {
            return Err(FieldError::invariant(name, "value must be finite"));
        }
        Ok(v)
    }

    fn text(&self, name: &str) -> Result<String, FieldError> {
        unescape(self.raw(name)?).map_err(|m| FieldError::malformed(name, m))
    }

    fn id(&self, name: &str) -> Result<String, FieldError> {
        let v = self.text(name)?;
        if v.is_empty() {
            return Err(FieldError::malformed(name, "empty identifier"));
        }
        Ok(v)
    }
}

/// Reads a whole stream, skipping blank lines and `#` comments. Each item
/// is either a validated record or an error with its line number.
pub fn parse_stream<R: BufRead>(
    reader: R,
    expected: Option<DbKind>,
) -> impl Iterator<Item = Result<Record, ParseError>> {
    reader.lines().enumerate().filter_map(move |(idx, line)| {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(ParseError {
                    line: line_no,
                    error: FieldError::malformed("", format!("read error: {e}")),
                }))
            }
        };
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            return None;
        }
        Some(parse_record(trimmed, expected).map_err(|error| ParseError { line: line_no, error }))
    })
}

/// Renders a record as one line (without trailing newline).
pub fn format_record(record: &Record) -> String {
    let mut out = String::with_capacity(160);
    match record {
        Record::Interface(s) => {
            let _ = write!(
                out,
                "kind=iface ts={} if={} pkts_in={} pkts_out={} octets_in={} octets_out={} errs_in={} errs_out={} speed={} descr={}",
                s.timestamp,
                escape(&s.interface_id),
                s.pkts_in,
                s.pkts_out,
                s.octets_in,
                s.octets_out,
                s.errs_in,
                s.errs_out,
                s.speed_bps,
                escape(&s.descr),
            );
        }
        Record::Flow(f) => {
            let _ = write!(
                out,
                "kind=flow start_ts={} end_ts={} src_addr={} dst_addr={} src_port={} dst_port={} proto={} bytes={} packets={}",
                f.start_ts,
                f.end_ts,
                escape(&f.src_addr),
                escape(&f.dst_addr),
                f.src_port,
                f.dst_port,
                f.proto,
                f.bytes,
                f.packets,
            );
        }
        Record::Optical(o) => {
            // `{}` on f64 is the shortest representation that parses back
            // to the same value, and never uses exponent notation.
            let _ = write!(
                out,
                "kind=optical ts={} port={} tx_power_dbm={} rx_power_dbm={}",
                o.timestamp,
                escape(&o.port_id),
                o.tx_power_dbm,
                o.rx_power_dbm,
            );
        }
    }
    out
}

fn escape(s: &str) -> std::borrow::Cow<'_, str> {
    if !s.contains(['%', ' ', '\t', '\r', '\n']) {
        return std::borrow::Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            ' ' => out.push_str("%20"),
            '\t' => out.push_str("%09"),
            '\r' => out.push_str("%0D"),
            '\n' => out.push_str("%0A"),
            c => out.push(c),
        }
    }
    std::borrow::Cow::Owned(out)
}

fn unescape(s: &str) -> Result<String, String> {
    if !s.contains('%') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('%') {
        out.push_str(&rest[..pos]);
        let code = rest
            .get(pos + 1..pos + 3)
            .ok_or_else(|| "truncated percent escape".to_string())?;
        let c = match code {
            "25" => '%',
            "20" => ' ',
            "09" => '\t',
            "0D" | "0d" => '\r',
            "0A" | "0a" => '\n',
            other => return Err(format!("unsupported escape `%{other}`")),
        };
        out.push(c);
        rest = &rest[pos + 3..];
    }
    out.push_str(rest);
    Ok(out)
}
