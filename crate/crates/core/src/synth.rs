//! Seeded synthetic conference-network telemetry with injected faults.
//!
//! Traffic per interface follows `base · (1 + A·sin(2π(h − 9)/24)) ·
//! weekday(day) · hour_noise · sample_noise`, peaking mid-afternoon.
//! Optical ports hold a stable power level with small noise. Flows are
//! drawn per booth host with log-normal byte counts. Fault effects are
//! superimposed on the clean signals, so the manifest's windows are exact
//! ground truth.

use crate::agent::tools::{detect_scope, ScopeDetection};
use crate::correlate::TopologyMap;
use crate::detect::{DetectorConfig, Window};
use crate::store::Store;
use crate::telemetry::{format_record, DbKind, FlowRecord, OpticalSample, Record, TelemetrySample, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// 2024-04-01T00:00:00Z.
pub const DEFAULT_START_TS: Timestamp = 1_711_929_600;
/// Interface-to-optical record ratio the port count is sized from.
pub const IFACE_RECORDS_PER_OPTICAL: (u64, u64) = (13_400, 623);

pub const INTERFACE_FILE: &str = "interface.tlm";
pub const FLOW_FILE: &str = "flow.tlm";
pub const OPTICAL_FILE: &str = "optical.tlm";
pub const TOPOLOGY_FILE: &str = "topology.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;
/// Down/up half-period of an interface flap.
const FLAP_PERIOD_S: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Receive power drops by `magnitude` dBm.
    OpticalDegradation,
    /// Input errors at `magnitude` per second.
    ErrorStorm,
    /// Traffic multiplied by `magnitude`.
    TrafficFlood,
    /// Alternating down periods with input errors at `magnitude` per second.
    InterfaceFlap,
}

impl FaultKind {
    pub const ALL: [FaultKind; 4] =
        [FaultKind::OpticalDegradation, FaultKind::ErrorStorm, FaultKind::TrafficFlood, FaultKind::InterfaceFlap];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::OpticalDegradation => "optical_degradation",
            FaultKind::ErrorStorm => "error_storm",
            FaultKind::TrafficFlood => "traffic_flood",
            FaultKind::InterfaceFlap => "interface_flap",
        }
    }

    pub fn targets_port(self) -> bool {
        self == FaultKind::OpticalDegradation
    }
}

impl std::str::FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fault kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    pub target: String,
    pub onset_ts: Timestamp,
    pub duration_s: i64,
    pub magnitude: f64,
}

impl FaultScenario {
    pub fn end_ts(&self) -> Timestamp {
        self.onset_ts + self.duration_s
    }

    pub fn active(&self, ts: Timestamp) -> bool {
        self.onset_ts <= ts && ts < self.end_ts()
    }

    /// Parses `kind:target:onset_ts:duration_s:magnitude`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, target, onset, duration, magnitude] = parts[..] else {
            return Err(format!("expected kind:target:onset_ts:duration_s:magnitude, got `{s}`"));
        };
        Ok(Self {
            kind: kind.parse()?,
            target: target.to_string(),
            onset_ts: onset.parse().map_err(|e| format!("onset_ts: {e}"))?,
            duration_s: duration.parse().map_err(|e| format!("duration_s: {e}"))?,
            magnitude: magnitude.parse().map_err(|e| format!("magnitude: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("scenario-target-missing: {kind} target `{target}` is not in the generated topology")]
    ScenarioTargetMissing { kind: &'static str, target: String },
    #[error("invalid scenario for `{target}`: {message}")]
    InvalidScenario { target: String, message: String },
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub diurnal_amplitude: f64,
    pub peak_hour: f64,
    /// Multipliers indexed by day of week, Monday first.
    pub weekday_factors: [f64; 7],
    pub hour_noise_sigma: f64,
    pub sample_noise_sigma: f64,
    pub base_pps_range: (f64, f64),
    pub rx_power_dbm: f64,
    pub tx_power_dbm: f64,
    pub optical_noise_dbm: f64,
    pub flows_per_hour: f64,
    pub flow_bytes_median: f64,
    pub flow_bytes_sigma: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            diurnal_amplitude: 0.3,
            peak_hour: 15.0,
            weekday_factors: [1.0, 1.05, 1.1, 1.05, 0.95, 0.8, 0.75],
            hour_noise_sigma: 0.03,
            sample_noise_sigma: 0.1,
            base_pps_range: (200.0, 5000.0),
            rx_power_dbm: -4.0,
            tx_power_dbm: -1.5,
            optical_noise_dbm: 0.1,
            flows_per_hour: 30.0,
            flow_bytes_median: 60_000.0,
            flow_bytes_sigma: 0.7,
        }
    }
}

impl TrafficModel {
    pub fn diurnal(&self, ts: Timestamp) -> f64 {
        let hour = ts.rem_euclid(DAY) as f64 / HOUR as f64;
        let phase = 2.0 * std::f64::consts::PI * (hour - (self.peak_hour - 6.0)) / 24.0;
        1.0 + self.diurnal_amplitude * phase.sin()
    }

    pub fn weekday(&self, ts: Timestamp) -> f64 {
        // 1970-01-01 was a Thursday (index 3 with Monday = 0).
        let dow = (ts.div_euclid(DAY) + 3).rem_euclid(7) as usize;
        self.weekday_factors[dow]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_interfaces: usize,
    pub days: u32,
    pub cadence_s: i64,
    pub start_ts: Timestamp,
    pub seed: u64,
    pub scenarios: Vec<FaultScenario>,
    #[serde(default)]
    pub model: TrafficModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_interfaces: 50,
            days: 3,
            cadence_s: 60,
            start_ts: DEFAULT_START_TS,
            seed: 7,
            scenarios: Vec::new(),
            model: TrafficModel::default(),
        }
    }
}

impl SynthConfig {
    pub fn end_ts(&self) -> Timestamp {
        self.start_ts + i64::from(self.days) * DAY
    }

    pub fn n_booths(&self) -> usize {
        self.n_interfaces.div_ceil(2)
    }

    pub fn n_ports(&self) -> usize {
        let (i, o) = IFACE_RECORDS_PER_OPTICAL;
        ((self.n_interfaces as u64 * o).div_ceil(i)).max(1) as usize
    }

    pub fn interface_ids(&self) -> Vec<String> {
        (0..self.n_interfaces).map(|i| format!("booth{:02}-eth{}", i / 2 + 1, i % 2)).collect()
    }

    pub fn port_ids(&self) -> Vec<String> {
        (0..self.n_ports()).map(|p| format!("opt-{:02}", p + 1)).collect()
    }

    pub fn booth_of(iface_index: usize) -> String {
        format!("booth{:02}", iface_index / 2 + 1)
    }

    pub fn host_of(iface_index: usize) -> String {
        format!("10.0.{}.5", iface_index / 2 + 1)
    }

    /// Optical port serving interface `i`: contiguous booth groups.
    pub fn port_index(&self, iface_index: usize) -> usize {
        let booth = iface_index / 2;
        booth * self.n_ports() / self.n_booths()
    }

    pub fn topology(&self) -> TopologyMap {
        let ports = self.port_ids();
        let mut t = TopologyMap::new();
        for (i, iface) in self.interface_ids().iter().enumerate() {
            t.add_port_link(iface, &ports[self.port_index(i)]).expect("generated links are unique");
            t.add_booth_link(iface, &Self::booth_of(i)).expect("generated links are unique");
        }
        t
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_interfaces == 0 || self.days == 0 {
            return Err(SynthError::InvalidConfig("need at least one interface and one day".into()));
        }
        if self.cadence_s <= 0 || DAY % self.cadence_s != 0 {
            return Err(SynthError::InvalidConfig("cadence_s must be a positive divisor of 86400".into()));
        }
        let ifaces = self.interface_ids();
        let ports = self.port_ids();
        for s in &self.scenarios {
            let pool = if s.kind.targets_port() { &ports } else { &ifaces };
            if !pool.contains(&s.target) {
                return Err(SynthError::ScenarioTargetMissing { kind: s.kind.as_str(), target: s.target.clone() });
            }
            if s.duration_s <= 0 || s.magnitude.is_nan() || s.magnitude <= 0.0 || s.magnitude.is_infinite() {
                return Err(SynthError::InvalidScenario {
                    target: s.target.clone(),
                    message: "duration_s and magnitude must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub start_ts: Timestamp,
    pub end_ts: Timestamp,
    pub days: u32,
    pub cadence_s: i64,
    pub n_interfaces: usize,
    pub n_ports: usize,
    pub n_hosts: usize,
    pub model: TrafficModel,
    pub scenarios: Vec<FaultScenario>,
    pub files: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub interface: Vec<TelemetrySample>,
    pub optical: Vec<OpticalSample>,
    pub flows: Vec<FlowRecord>,
    pub topology: TopologyMap,
    pub manifest: Manifest,
}

fn entity_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates the dataset described by `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let m = &cfg.model;
    let ifaces = cfg.interface_ids();
    let ports = cfg.port_ids();
    let steps = (cfg.end_ts() - cfg.start_ts) / cfg.cadence_s;
    let hours = (cfg.end_ts() - cfg.start_ts) / HOUR;
    let sample_noise = Normal::new(1.0, m.sample_noise_sigma).expect("valid sigma");
    let hour_noise = LogNormal::new(0.0, m.hour_noise_sigma).expect("valid sigma");
    let faults_on = |target: &str| -> Vec<&FaultScenario> {
        cfg.scenarios.iter().filter(|s| s.target == target).collect()
    };

    let mut per_iface: Vec<Vec<TelemetrySample>> = Vec::with_capacity(ifaces.len());
    for (i, iface) in ifaces.iter().enumerate() {
        let mut rng = entity_rng(cfg.seed, i as u64);
        let base = rng.random_range(m.base_pps_range.0..m.base_pps_range.1);
        let pkt_size = rng.random_range(300.0..1200.0);
        let speed = if i % 2 == 0 { 10_000_000_000 } else { 1_000_000_000 };
        let hour_factor: Vec<f64> = (0..hours).map(|_| hour_noise.sample(&mut rng)).collect();
        let faults = faults_on(iface);
        let (mut pi, mut po) = (rng.random_range(0..1u64 << 40), rng.random_range(0..1u64 << 40));
        let (mut oi, mut oo) = (rng.random_range(0..1u64 << 48), rng.random_range(0..1u64 << 48));
        let (mut ei, eo) = (0u64, 0u64);
        let mut out = Vec::with_capacity(steps as usize);
        let mut err_carry = 0.0;
        for k in 0..steps {
            let ts = cfg.start_ts + k * cfg.cadence_s;
            if k > 0 {
                let h = ((ts - cfg.start_ts) / HOUR) as usize;
                let level = base * m.diurnal(ts) * m.weekday(ts) * hour_factor[h.min(hour_factor.len() - 1)];
                let mut mult_in = sample_noise.sample(&mut rng).max(0.0);
                let mut mult_out = sample_noise.sample(&mut rng).max(0.0);
                let mut err_rate = 0.0;
                for f in &faults {
                    // The interval ending at `ts` carries the fault.
                    if !f.active(ts - cfg.cadence_s) {
                        continue;
                    }
                    match f.kind {
                        FaultKind::TrafficFlood => {
                            mult_in *= f.magnitude;
                            mult_out *= f.magnitude;
                        }
                        FaultKind::ErrorStorm => err_rate += f.magnitude,
                        FaultKind::InterfaceFlap => {
                            err_rate += f.magnitude;
                            if ((ts - cfg.cadence_s - f.onset_ts) / FLAP_PERIOD_S) % 2 == 0 {
                                mult_in = 0.0;
                                mult_out = 0.0;
                            }
                        }
                        FaultKind::OpticalDegradation => {}
                    }
                }
                let dt = cfg.cadence_s as f64;
                let din = (level * mult_in * dt).round() as u64;
                let dout = (level * 0.6 * mult_out * dt).round() as u64;
                pi += din;
                po += dout;
                oi += (din as f64 * pkt_size).round() as u64;
                oo += (dout as f64 * pkt_size * 0.8).round() as u64;
                err_carry += err_rate * dt;
                let whole = err_carry.floor();
                ei += whole as u64;
                err_carry -= whole;
            }
            out.push(TelemetrySample {
                timestamp: ts,
                interface_id: iface.clone(),
                pkts_in: pi,
                pkts_out: po,
                octets_in: oi,
                octets_out: oo,
                errs_in: ei,
                errs_out: eo,
                speed_bps: speed,
                descr: format!("Booth{:02} uplink {}", i / 2 + 1, i % 2),
            });
        }
        per_iface.push(out);
    }

    let optical_noise = Normal::new(0.0, m.optical_noise_dbm).expect("valid sigma");
    let mut per_port: Vec<Vec<OpticalSample>> = Vec::with_capacity(ports.len());
    for (p, port) in ports.iter().enumerate() {
        let mut rng = entity_rng(cfg.seed, 10_000 + p as u64);
        let rx0 = m.rx_power_dbm + rng.random_range(-1.0..1.0);
        let tx0 = m.tx_power_dbm + rng.random_range(-0.5..0.5);
        let faults = faults_on(port);
        let mut out = Vec::with_capacity(steps as usize);
        for k in 0..steps {
            let ts = cfg.start_ts + k * cfg.cadence_s;
            let drop: f64 = faults
                .iter()
                .filter(|f| f.kind == FaultKind::OpticalDegradation && f.active(ts))
                .map(|f| f.magnitude)
                .sum();
            let rx = rx0 + optical_noise.sample(&mut rng) - drop;
            let tx = tx0 + optical_noise.sample(&mut rng);
            out.push(OpticalSample {
                timestamp: ts,
                port_id: port.clone(),
                tx_power_dbm: (tx * 1000.0).round() / 1000.0,
                rx_power_dbm: (rx * 1000.0).round() / 1000.0,
            });
        }
        per_port.push(out);
    }

    let bytes_dist = LogNormal::new(m.flow_bytes_median.ln(), m.flow_bytes_sigma).expect("valid sigma");
    let duration_dist = LogNormal::new(20f64.ln(), 1.0).expect("valid sigma");
    let mut flows = Vec::new();
    let n_hosts = cfg.n_booths();
    for b in 0..n_hosts {
        let mut rng = entity_rng(cfg.seed, 20_000 + b as u64);
        let src = SynthConfig::host_of(b * 2);
        for h in 0..hours {
            let hour_start = cfg.start_ts + h * HOUR;
            let lambda = m.flows_per_hour * m.diurnal(hour_start + HOUR / 2) * m.weekday(hour_start);
            let n = Poisson::new(lambda.max(1.0)).expect("positive rate").sample(&mut rng) as usize;
            let mut hour_flows: Vec<FlowRecord> = (0..n.max(1))
                .map(|_| {
                    let start = hour_start + rng.random_range(0..HOUR);
                    let bytes = bytes_dist.sample(&mut rng).round().max(64.0) as u64;
                    let size = rng.random_range(400.0..1400.0);
                    let dur = (duration_dist.sample(&mut rng).round() as i64).clamp(0, 600);
                    FlowRecord {
                        start_ts: start,
                        end_ts: start + dur,
                        src_addr: src.clone(),
                        dst_addr: format!("10.0.0.{}", rng.random_range(1..=10)),
                        src_port: rng.random_range(32_768..=60_999),
                        dst_port: [443, 80, 53, 22, 8443][rng.random_range(0..5)],
                        proto: 6,
                        bytes,
                        packets: ((bytes as f64 / size).ceil() as u64).max(1),
                    }
                })
                .collect();
            hour_flows.sort_by_key(|f| f.start_ts);
            flows.extend(hour_flows);
        }
    }
    flows.sort_by(|a, b| (a.start_ts, &a.src_addr).cmp(&(b.start_ts, &b.src_addr)));

    let interface = interleave(per_iface);
    let optical = interleave(per_port);

    let files: BTreeMap<String, String> = [("interface", INTERFACE_FILE), ("flow", FLOW_FILE), ("optical", OPTICAL_FILE)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let counts: BTreeMap<String, usize> =
        [("interface", interface.len()), ("flow", flows.len()), ("optical", optical.len())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
    let manifest = Manifest {
        seed: cfg.seed,
        start_ts: cfg.start_ts,
        end_ts: cfg.end_ts(),
        days: cfg.days,
        cadence_s: cfg.cadence_s,
        n_interfaces: cfg.n_interfaces,
        n_ports: ports.len(),
        n_hosts,
        model: cfg.model.clone(),
        scenarios: cfg.scenarios.clone(),
        files,
        counts,
    };
    Ok(Dataset { interface, optical, flows, topology: cfg.topology(), manifest })
}

/// Merges per-entity series (each in time order) into time order, entity
/// order breaking ties.
fn interleave<T>(per_entity: Vec<Vec<T>>) -> Vec<T> {
    let n = per_entity.iter().map(Vec::len).max().unwrap_or(0);
    let total = per_entity.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = per_entity.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(total);
    for _ in 0..n {
        for it in iters.iter_mut() {
            if let Some(x) = it.next() {
                out.push(x);
            }
        }
    }
    out
}

impl Dataset {
    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.interface
            .iter()
            .cloned()
            .map(Record::from)
            .chain(self.flows.iter().cloned().map(Record::from))
            .chain(self.optical.iter().cloned().map(Record::from))
    }

    /// One in-memory store per kind, named after the kind.
    pub fn stores(&self) -> [Store; 3] {
        let iface = Store::new(DbKind::Interface, DbKind::Interface.as_str());
        let flow = Store::new(DbKind::Flow, DbKind::Flow.as_str());
        let optical = Store::new(DbKind::Optical, DbKind::Optical.as_str());
        iface.append_all(self.interface.iter().cloned().map(Record::from)).expect("kind matches");
        flow.append_all(self.flows.iter().cloned().map(Record::from)).expect("kind matches");
        optical.append_all(self.optical.iter().cloned().map(Record::from)).expect("kind matches");
        [iface, flow, optical]
    }

    /// Writes the telemetry files, topology and manifest into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_lines(&dir.join(INTERFACE_FILE), self.interface.iter().cloned().map(Record::from))?;
        write_lines(&dir.join(FLOW_FILE), self.flows.iter().cloned().map(Record::from))?;
        write_lines(&dir.join(OPTICAL_FILE), self.optical.iter().cloned().map(Record::from))?;
        std::fs::write(dir.join(TOPOLOGY_FILE), self.topology.to_text())?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), manifest + "\n")
    }
}

fn write_lines(path: &Path, records: impl Iterator<Item = Record>) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", format_record(&r))?;
    }
    w.flush()
}

pub fn read_manifest(path: &Path) -> std::io::Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// `n` faults cycling through all four kinds, on distinct targets, each
/// starting after the first day and lasting 2 to 4 hours.
pub fn default_scenarios(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<FaultScenario> {
    let mut rng = entity_rng(seed, 90_000);
    let ifaces = cfg.interface_ids();
    let ports = cfg.port_ids();
    let mut iface_pool: Vec<usize> = (0..ifaces.len()).collect();
    let mut port_uses = vec![0usize; ports.len()];
    let first = cfg.start_ts + DAY;
    let last_onset = cfg.end_ts() - 5 * HOUR;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let kind = FaultKind::ALL[k % 4];
        let duration_s = rng.random_range(2..=4) * HOUR;
        let minute = rng.random_range(0..60) * 60;
        let span_hours = ((last_onset - first) / HOUR).max(1);
        let onset_ts = first + rng.random_range(0..span_hours) * HOUR + minute;
        let (target, magnitude) = match kind {
            FaultKind::OpticalDegradation => {
                // Spread over ports; reuse only once all ports have a fault,
                // then push the onset past the previous one.
                let p = (0..ports.len()).min_by_key(|&p| (port_uses[p], p)).expect("at least one port");
                port_uses[p] += 1;
                (ports[p].clone(), rng.random_range(8.0..12.0))
            }
            _ => {
                let idx = iface_pool.swap_remove(rng.random_range(0..iface_pool.len().max(1)) % iface_pool.len().max(1));
                let mag = match kind {
                    FaultKind::ErrorStorm => rng.random_range(5.0..50.0),
                    FaultKind::TrafficFlood => rng.random_range(4.0..6.0),
                    _ => rng.random_range(5.0..20.0),
                };
                (ifaces[idx].clone(), mag)
            }
        };
        out.push(FaultScenario { kind, target, onset_ts, duration_s, magnitude: (magnitude * 100.0f64).round() / 100.0 });
    }
    // Separate repeated faults on the same port so their windows never overlap.
    let mut by_target: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in out.iter().enumerate() {
        by_target.entry(s.target.clone()).or_default().push(i);
    }
    for idx in by_target.values().filter(|v| v.len() > 1) {
        let slot = (last_onset - first) / idx.len() as i64;
        for (j, &i) in idx.iter().enumerate() {
            out[i].onset_ts = first + j as i64 * slot + (out[i].onset_ts - first) % slot.max(1);
            out[i].onset_ts = out[i].onset_ts.min(first + (j as i64 + 1) * slot - out[i].duration_s - HOUR);
        }
    }
    out
}

/// An optical drop on the port serving `iface_index` plus an error storm
/// on that interface starting `lag_s` later.
pub fn correlated_pair(cfg: &SynthConfig, iface_index: usize, onset_ts: Timestamp, lag_s: i64) -> [FaultScenario; 2] {
    let port = cfg.port_ids()[cfg.port_index(iface_index)].clone();
    let iface = cfg.interface_ids()[iface_index].clone();
    [
        FaultScenario {
            kind: FaultKind::OpticalDegradation,
            target: port,
            onset_ts,
            duration_s: 3 * HOUR,
            magnitude: 10.0,
        },
        FaultScenario { kind: FaultKind::ErrorStorm, target: iface, onset_ts: onset_ts + lag_s, duration_s: 3 * HOUR, magnitude: 20.0 },
    ]
}

/// Detection quality of a sweep against the injected faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub faults: usize,
    pub detected: usize,
    pub recall: f64,
    /// Evaluated (entity, metric, window) triples not overlapping a fault on
    /// that entity.
    pub clean_series_windows: usize,
    pub false_events: usize,
    pub false_event_rate: f64,
    pub missed: Vec<FaultScenario>,
}

/// Runs the scope detector on every aligned window in `[from, to)`.
pub fn detection_sweep(
    stores: &[&Store],
    cfg: &DetectorConfig,
    from: Timestamp,
    to: Timestamp,
) -> Result<Vec<(Window, ScopeDetection)>, String> {
    let w = cfg.window_s;
    let mut out = Vec::new();
    let mut start = from.div_euclid(w) * w;
    while start + w <= to {
        let window = Window::new(start, start + w);
        let mut merged = ScopeDetection::default();
        for store in stores {
            let r = detect_scope(store, cfg, window, None, None)?;
            merged.evaluated += r.evaluated;
            merged.series.extend(r.series);
            merged.events.extend(r.events);
            merged.skipped.extend(r.skipped);
        }
        out.push((window, merged));
        start += w;
    }
    Ok(out)
}

/// A fault counts as detected when any event on its target overlaps its
/// active interval. Events on series/windows clear of faults are false.
pub fn score_detection(scenarios: &[FaultScenario], sweep: &[(Window, ScopeDetection)]) -> DetectionScore {
    let faulted = |entity: &str, w: &Window| {
        scenarios.iter().any(|f| f.target == entity && w.overlaps(&Window::new(f.onset_ts, f.end_ts())))
    };
    let mut missed = Vec::new();
    for f in scenarios {
        let active = Window::new(f.onset_ts, f.end_ts());
        let hit = sweep
            .iter()
            .flat_map(|(_, d)| &d.events)
            .any(|e| e.entity_id == f.target && e.window.overlaps(&active));
        if !hit {
            missed.push(f.clone());
        }
    }
    let mut clean = 0;
    let mut false_events = 0;
    for (w, d) in sweep {
        for (entity, metric) in &d.series {
            if faulted(entity, w) {
                continue;
            }
            clean += 1;
            false_events += d.events.iter().filter(|e| &e.entity_id == entity && &e.metric == metric).count();
        }
    }
    let detected = scenarios.len() - missed.len();
    DetectionScore {
        faults: scenarios.len(),
        detected,
        recall: if scenarios.is_empty() { 1.0 } else { detected as f64 / scenarios.len() as f64 },
        clean_series_windows: clean,
        false_events,
        false_event_rate: if clean == 0 { 0.0 } else { false_events as f64 / clean as f64 },
        missed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::rate_series;

    fn small(scenarios: Vec<FaultScenario>) -> SynthConfig {
        SynthConfig { n_interfaces: 1, days: 1, scenarios, ..SynthConfig::default() }
    }

    #[test]
    fn one_interface_one_day_counts() {
        let ds = generate(&small(vec![])).unwrap();
        assert_eq!(ds.interface.len(), 1440);
        assert!(ds.interface.iter().all(|s| s.errs_in == 0 && s.errs_out == 0));
        assert_eq!(ds.manifest.counts["interface"], 1440);
        assert_eq!(ds.optical.len(), 1440);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig { n_interfaces: 4, days: 1, ..SynthConfig::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&cfg).unwrap().write(a.path()).unwrap();
        generate(&cfg).unwrap().write(b.path()).unwrap();
        for f in [INTERFACE_FILE, FLOW_FILE, OPTICAL_FILE, TOPOLOGY_FILE, MANIFEST_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let other = SynthConfig { seed: 8, ..cfg };
        let c = tempfile::tempdir().unwrap();
        generate(&other).unwrap().write(c.path()).unwrap();
        assert_ne!(std::fs::read(a.path().join(INTERFACE_FILE)).unwrap(), std::fs::read(c.path().join(INTERFACE_FILE)).unwrap());
    }

    #[test]
    fn optical_degradation_lowers_rx_by_magnitude() {
        let onset = DEFAULT_START_TS + 10 * HOUR;
        let s = FaultScenario {
            kind: FaultKind::OpticalDegradation,
            target: "opt-01".into(),
            onset_ts: onset,
            duration_s: 2 * HOUR,
            magnitude: 10.0,
        };
        let ds = generate(&small(vec![s.clone()])).unwrap();
        let mean = |f: &dyn Fn(&OpticalSample) -> bool| {
            let v: Vec<f64> = ds.optical.iter().filter(|o| f(o)).map(|o| o.rx_power_dbm).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let inside = mean(&|o| s.active(o.timestamp));
        let outside = mean(&|o| !s.active(o.timestamp));
        // Noise is 0.1 dBm per sample; 120 samples put the mean within ~0.01.
        assert!(((outside - inside) - 10.0).abs() < 0.1, "{outside} - {inside}");
        // Nothing outside the window is affected.
        assert!(ds.optical.iter().filter(|o| !s.active(o.timestamp)).all(|o| o.rx_power_dbm > -10.0));
    }

    #[test]
    fn error_storm_stays_inside_window() {
        let onset = DEFAULT_START_TS + 5 * HOUR + 600;
        let s = FaultScenario {
            kind: FaultKind::ErrorStorm,
            target: "booth01-eth0".into(),
            onset_ts: onset,
            duration_s: 2 * HOUR,
            magnitude: 10.0,
        };
        let ds = generate(&small(vec![s.clone()])).unwrap();
        let rates = rate_series(ds.interface.iter());
        for r in &rates {
            let interval_start = r.timestamp - r.interval_s;
            if s.active(interval_start) {
                assert!((r.eps_in - 10.0).abs() < 1.0 / 60.0 + 1e-9, "{}", r.eps_in);
            } else {
                assert_eq!(r.eps_in, 0.0);
            }
        }
    }

    #[test]
    fn rejects_missing_target() {
        let s = FaultScenario {
            kind: FaultKind::ErrorStorm,
            target: "booth99-eth0".into(),
            onset_ts: DEFAULT_START_TS,
            duration_s: 60,
            magnitude: 1.0,
        };
        assert!(matches!(generate(&small(vec![s])), Err(SynthError::ScenarioTargetMissing { .. })));
    }

    #[test]
    fn default_shape() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.n_ports(), 3);
        let t = cfg.topology();
        assert_eq!(t.port_of("booth01-eth0"), Some("opt-01"));
        assert_eq!(t.port_of("booth25-eth1"), Some("opt-03"));
        let sc = default_scenarios(&cfg, 12, 1);
        assert_eq!(sc.len(), 12);
        for k in FaultKind::ALL {
            assert_eq!(sc.iter().filter(|s| s.kind == k).count(), 3);
        }
        for s in &sc {
            assert!(s.onset_ts >= cfg.start_ts + DAY && s.end_ts() <= cfg.end_ts(), "{s:?}");
        }
        for (i, a) in sc.iter().enumerate() {
            for b in &sc[i + 1..] {
                assert!(a.target != b.target || a.end_ts() <= b.onset_ts || b.end_ts() <= a.onset_ts);
            }
        }
    }

    #[test]
    fn scenario_parse() {
        let s = FaultScenario::parse("error_storm:booth01-eth0:1712000000:7200:12.5").unwrap();
        assert_eq!(s.kind, FaultKind::ErrorStorm);
        assert_eq!(s.magnitude, 12.5);
        assert!(FaultScenario::parse("flood:x:1:2").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Every difference a fault makes lies inside its manifest window.
            #[test]
            fn fault_effects_stay_in_window(
                kind in proptest::sample::select(FaultKind::ALL.to_vec()),
                iface in 0usize..2,
                onset_min in 60i64..1200,
                dur_min in 5i64..180,
                magnitude in 2.0f64..20.0,
            ) {
                let base = SynthConfig { n_interfaces: 2, days: 1, seed: 5, ..SynthConfig::default() };
                let target = match kind {
                    FaultKind::OpticalDegradation => base.port_ids()[0].clone(),
                    _ => base.interface_ids()[iface].clone(),
                };
                let f = FaultScenario {
                    kind,
                    target,
                    onset_ts: base.start_ts + onset_min * 60,
                    duration_s: dur_min * 60,
                    magnitude,
                };
                let clean = generate(&base).unwrap();
                let faulty = generate(&SynthConfig { scenarios: vec![f.clone()], ..base.clone() }).unwrap();
                prop_assert_eq!(&faulty.manifest.scenarios, &vec![f.clone()]);

                for id in base.interface_ids() {
                    let pick = |ds: &Dataset| rate_series(ds.interface.iter().filter(|s| s.interface_id == id));
                    let (a, b) = (pick(&clean), pick(&faulty));
                    prop_assert_eq!(a.len(), b.len());
                    for (x, y) in a.iter().zip(&b) {
                        if x != y {
                            prop_assert!(f.active(x.timestamp - x.interval_s), "{} changed at {}", id, x.timestamp);
                        }
                    }
                }
                prop_assert_eq!(clean.optical.len(), faulty.optical.len());
                for (x, y) in clean.optical.iter().zip(&faulty.optical) {
                    if x != y {
                        prop_assert!(f.active(x.timestamp), "{} changed at {}", x.port_id, x.timestamp);
                    }
                }
                let outside = |ds: &Dataset| -> Vec<FlowRecord> {
                    ds.flows.iter().filter(|r| !f.active(r.start_ts)).cloned().collect()
                };
                prop_assert_eq!(outside(&clean), outside(&faulty));
            }
        }
    }
}
