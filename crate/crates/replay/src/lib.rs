//! Operator tooling: synthetic datasets, file ingest into stores, stream
//! replay into a running gateway, and one-shot detection reports.

use netagent_core::agent::tools::{latest_window_of, ScopeDetection};
use netagent_core::detect::{DetectorConfig, Window};
use netagent_core::store::{Store, StoreError};
use netagent_core::synth::{
    default_scenarios, detection_sweep, generate, DetectionScore, FaultScenario, Manifest, SynthConfig, SynthError,
};
use netagent_core::telemetry::{format_record, parse_record, DbKind, Record, Timestamp};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Most record lines sent in one ingest request.
pub const MAX_LINES_PER_POST: usize = 20_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("store {path}: {source}")]
    Store { path: PathBuf, source: StoreError },
    #[error("gateway-unreachable: {0}")]
    GatewayUnreachable(String),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Store file for `kind` inside a store directory.
pub fn store_path(dir: &Path, kind: DbKind) -> PathBuf {
    dir.join(format!("{}.nwts", kind.as_str()))
}

/// Generates a dataset into `out`. `faults` default scenarios are added to
/// any already in `cfg`.
pub fn synth(mut cfg: SynthConfig, faults: usize, out: &Path) -> Result<Manifest, CliError> {
    if faults > 0 {
        let extra = default_scenarios(&cfg, faults, cfg.seed);
        cfg.scenarios.extend(extra);
    }
    let ds = generate(&cfg)?;
    ds.write(out).map_err(io_err(out))?;
    Ok(ds.manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadLine {
    pub file: PathBuf,
    pub line: usize,
    pub error: String,
}

impl std::fmt::Display for BadLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.file.display(), self.line, self.error)
    }
}

/// Parses every record line in `files` in order. Blank lines and `#`
/// comments are skipped; bad lines are collected, not fatal.
pub fn read_records(files: &[PathBuf]) -> Result<(Vec<Record>, Vec<BadLine>), CliError> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(file).map_err(io_err(file))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_record(line, None) {
                Ok(r) => records.push(r),
                Err(e) => bad.push(BadLine { file: file.clone(), line: i + 1, error: e.to_string() }),
            }
        }
    }
    Ok((records, bad))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestCounts {
    pub per_kind: BTreeMap<DbKind, usize>,
    pub bad: Vec<BadLine>,
}

/// Appends every valid record in `files` to the stores in `store_dir`,
/// creating them as needed.
pub fn ingest(files: &[PathBuf], store_dir: &Path) -> Result<IngestCounts, CliError> {
    let (records, bad) = read_records(files)?;
    std::fs::create_dir_all(store_dir).map_err(io_err(store_dir))?;
    let mut by_kind: BTreeMap<DbKind, Vec<Record>> = BTreeMap::new();
    for r in records {
        by_kind.entry(r.kind()).or_default().push(r);
    }
    let mut counts = IngestCounts { bad, ..Default::default() };
    for (kind, recs) in by_kind {
        let path = store_path(store_dir, kind);
        let store_err = |source| CliError::Store { path: path.clone(), source };
        let store = Store::open_or_create(&path, kind).map_err(store_err)?;
        let n = store.append_all(recs).map_err(store_err)?;
        store.persist(&path).map_err(store_err)?;
        counts.per_kind.insert(kind, n);
    }
    Ok(counts)
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub gateway: String,
    /// Telemetry seconds per wall-clock second; 0 sends as fast as possible.
    pub speedup: f64,
    /// Wall-clock batching interval.
    pub batch: Duration,
    pub token: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayStats {
    pub sent: BTreeMap<DbKind, usize>,
    pub rejected: usize,
    pub posts: usize,
    pub bad: Vec<BadLine>,
    pub elapsed: Duration,
}

struct Gateway {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
}

impl Gateway {
    fn new(opts: &ReplayOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, base: opts.gateway.trim_end_matches('/').to_string(), token: opts.token.clone() }
    }

    fn check(&self) -> Result<(), CliError> {
        let url = format!("{}/api/health", self.base);
        match self.agent.get(&url).call() {
            Ok(r) if r.status().is_success() => Ok(()),
            Ok(r) => Err(CliError::GatewayUnreachable(format!("{url} returned {}", r.status()))),
            Err(e) => Err(CliError::GatewayUnreachable(format!("{url}: {e}"))),
        }
    }

    /// Posts record lines; returns (accepted, rejected).
    fn post(&self, kind: DbKind, lines: &[String]) -> Result<(usize, usize), CliError> {
        let url = format!("{}/api/ingest/{}", self.base, kind.as_str());
        let mut req = self.agent.post(&url).header("Content-Type", "text/plain");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(lines.join("\n")).map_err(|e| CliError::GatewayUnreachable(format!("{url}: {e}")))?;
        let status = resp.status();
        let body = resp.body_mut().read_to_string().map_err(|e| CliError::Gateway(e.to_string()))?;
        if !status.is_success() {
            return Err(CliError::Gateway(format!("{url} returned {status}: {body}")));
        }
        let v: serde_json::Value = serde_json::from_str(&body).map_err(|e| CliError::Gateway(e.to_string()))?;
        let num = |k: &str| v.get(k).and_then(|x| x.as_u64()).unwrap_or(0) as usize;
        Ok((num("accepted"), num("rejected")))
    }
}

/// Streams the records in `files` to a running gateway in timestamp order,
/// keeping inter-record gaps divided by the speedup.
pub fn replay(files: &[PathBuf], opts: &ReplayOptions) -> Result<ReplayStats, CliError> {
    if !(opts.speedup >= 0.0 && opts.speedup.is_finite()) {
        return Err(CliError::Invalid(format!("speedup must be a non-negative number, got {}", opts.speedup)));
    }
    let (mut records, bad) = read_records(files)?;
    records.sort_by_key(Record::timestamp);
    let gw = Gateway::new(opts);
    gw.check()?;
    let mut stats = ReplayStats { bad, ..Default::default() };
    let Some(t0) = records.first().map(Record::timestamp) else {
        return Ok(stats);
    };
    let due = |ts: Timestamp| -> Duration {
        if opts.speedup == 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64((ts - t0) as f64 / opts.speedup)
        }
    };
    let start = Instant::now();
    let mut next = 0;
    while next < records.len() {
        let now = start.elapsed();
        let mut batches: BTreeMap<DbKind, Vec<String>> = BTreeMap::new();
        while next < records.len() && due(records[next].timestamp()) <= now {
            let r = &records[next];
            batches.entry(r.kind()).or_default().push(format_record(r));
            next += 1;
        }
        for (kind, lines) in batches {
            for chunk in lines.chunks(MAX_LINES_PER_POST) {
                let (ok, rejected) = gw.post(kind, chunk)?;
                *stats.sent.entry(kind).or_default() += ok;
                stats.rejected += rejected;
                stats.posts += 1;
            }
        }
        if next < records.len() {
            let wake = due(records[next].timestamp()).max(now + opts.batch);
            if let Some(d) = wake.checked_sub(start.elapsed()) {
                std::thread::sleep(d);
            }
        }
    }
    stats.elapsed = start.elapsed();
    Ok(stats)
}

/// Opens whichever of the three stores exist in `store_dir`.
pub fn open_stores(store_dir: &Path) -> Result<Vec<Store>, CliError> {
    let mut out = Vec::new();
    for kind in DbKind::ALL {
        let path = store_path(store_dir, kind);
        if path.exists() {
            out.push(Store::open(&path).map_err(|source| CliError::Store { path, source })?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Invalid(format!("no stores in {}", store_dir.display())));
    }
    Ok(out)
}

/// Detection over every aligned window in `[from, to)`. Without bounds the
/// newest complete window is used.
pub fn report(
    stores: &[Store],
    cfg: &DetectorConfig,
    from: Option<Timestamp>,
    to: Option<Timestamp>,
) -> Result<Vec<(Window, ScopeDetection)>, CliError> {
    let refs: Vec<&Store> = stores.iter().collect();
    let (from, to) = match (from, to) {
        (Some(f), Some(t)) => (f, t),
        (f, t) => {
            let latest = latest_window_of(&refs, cfg.window_s)
                .ok_or_else(|| CliError::Invalid("stores are empty".into()))?;
            (f.unwrap_or(latest.start), t.unwrap_or(latest.end))
        }
    };
    if to <= from {
        return Err(CliError::Invalid(format!("empty range [{from}, {to})")));
    }
    detection_sweep(&refs, cfg, from, to).map_err(CliError::Invalid)
}

/// One header line per window, then one line per event grouped by entity.
pub fn format_report(sweep: &[(Window, ScopeDetection)]) -> String {
    let mut out = String::new();
    for (w, d) in sweep {
        let _ = writeln!(
            out,
            "window {}..{} evaluated={} skipped={} events={}",
            w.start,
            w.end,
            d.evaluated,
            d.skipped.len(),
            d.events.len()
        );
        let mut events: Vec<_> = d.events.iter().collect();
        events.sort_by(|a, b| (&a.entity_id, &a.metric).cmp(&(&b.entity_id, &b.metric)));
        for e in events {
            let _ = writeln!(
                out,
                "  {} {} {:?} {:?} {:?} observed={} score={}",
                e.entity_id, e.metric, e.kind, e.severity, e.direction, e.observed, e.score
            );
        }
    }
    out
}

pub fn format_score(s: &DetectionScore) -> String {
    let mut out = format!(
        "faults={} detected={} recall={:.4} clean_series_windows={} false_events={} false_event_rate={:.6}\n",
        s.faults, s.detected, s.recall, s.clean_series_windows, s.false_events, s.false_event_rate
    );
    for f in &s.missed {
        let _ = writeln!(out, "  missed {} {} onset={} duration={}", f.kind.as_str(), f.target, f.onset_ts, f.duration_s);
    }
    out
}

/// Parses `--scenario` values.
pub fn parse_scenarios(specs: &[String]) -> Result<Vec<FaultScenario>, CliError> {
    specs.iter().map(|s| FaultScenario::parse(s).map_err(CliError::Invalid)).collect()
}
