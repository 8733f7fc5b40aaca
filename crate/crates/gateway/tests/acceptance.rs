//! Acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero when any fails.

mod common;

#[path = "../../core/tests/support/isolation_fuzz.rs"]
mod isolation_fuzz;

use common::{get, post, write_fixture, GatewayProcess};
use netagent_core::agent::{AgentSpec, AuditEvent, AuditLog, AuditRecord, ScopedAgent};
use netagent_core::correlate::IncidentBook;
use netagent_core::detect::{detect, median_mad, modified_zscore, DetectorConfig, Direction, Window};
use netagent_core::llm::{BackendError, ChatTurn, ModelBackend, ToolCall, ToolSchema};
use netagent_core::store::{Point, Store, WindowQuery};
use netagent_core::synth::{
    correlated_pair, default_scenarios, detection_sweep, generate, score_detection, SynthConfig,
    IFACE_RECORDS_PER_OPTICAL,
};
use netagent_core::telemetry::{consolidate, rate_series, DbKind, TelemetrySample};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::sync::Arc;
use std::time::Instant;

const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("dataset-shape fidelity", dataset_shape),
        ("detector oracle equivalence", detector_oracle),
        ("injection recall/precision", injection_recall),
        ("fault localization", fault_localization),
        ("isolation soundness", isolation_soundness),
        ("deterministic end-to-end chat", deterministic_chat),
        ("durability", durability),
        ("loop termination", loop_termination),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let r = std::panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| format!("{p:?}"))));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------------------------------------------------------------------------

fn dataset_shape() -> Outcome {
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let target = IFACE_RECORDS_PER_OPTICAL.0 as f64 / IFACE_RECORDS_PER_OPTICAL.1 as f64;
    let ratio = ds.interface.len() as f64 / ds.optical.len() as f64;
    ensure!(ratio >= target / 2.0 && ratio <= target * 2.0, "ratio {ratio:.2} outside [{:.2}, {:.2}]", target / 2.0, target * 2.0);

    let mut by_iface: BTreeMap<&str, Vec<&TelemetrySample>> = BTreeMap::new();
    for s in &ds.interface {
        by_iface.entry(s.interface_id.as_str()).or_default().push(s);
    }
    let rates: Vec<_> = by_iface.values().flat_map(|v| rate_series(v.iter().copied())).collect();
    let mut checked = Vec::new();
    // The first budget mirrors a 13.4:1 reduction.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut budgets = vec![(rates.len() as f64 / 13.4) as usize, rates.len() / 3, rates.len() / 100];
    budgets.extend((0..5).map(|_| rng.random_range(60..rates.len())));
    for budget in budgets {
        let c = consolidate(&rates, 60, budget).map_err(|e| e.to_string())?;
        let n = c.buckets.len();
        ensure!(n * 2 >= budget && n <= budget, "budget {budget}: {n} buckets at window {}", c.window_s);
        checked.push(format!("{budget}->{n}"));
    }
    Ok(format!(
        "{} interface / {} optical records, ratio {ratio:.2} (target {target:.2}); {} rates consolidated {}",
        ds.interface.len(),
        ds.optical.len(),
        rates.len(),
        checked.join(", ")
    ))
}

// ---------------------------------------------------------------------------

fn sort_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn oracle_stats(v: &[f64]) -> (f64, f64) {
    let med = sort_median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    (med, sort_median(&dev))
}

fn oracle_z(x: f64, med: f64, mad: f64, cfg: &DetectorConfig) -> f64 {
    let floor = cfg.mad_floor_rel * med.abs().max(1.0);
    0.6745 * (x - med) / mad.max(floor)
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powi(rng.random_range(-3..7));
    let ties = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            if ties {
                rng.random_range(0..5) as f64 * scale
            } else {
                (rng.random::<f64>() - 0.3) * scale
            }
        })
        .collect()
}

/// Hourly series with `baseline + 1` windows of `per` points each.
fn hourly_series(rng: &mut ChaCha8Rng, cfg: &DetectorConfig, per: usize) -> Vec<Point> {
    let level = 10f64.powi(rng.random_range(0..6));
    let mut pts = Vec::new();
    for w in 0..=cfg.baseline_windows as i64 {
        let spike = if w == cfg.baseline_windows as i64 && rng.random_bool(0.3) { rng.random_range(1.5..4.0) } else { 1.0 };
        for k in 0..per as i64 {
            let v = level * spike * (1.0 + 0.2 * (rng.random::<f64>() - 0.5));
            pts.push(Point::raw(w * cfg.window_s + k * (cfg.window_s / per as i64), v));
        }
    }
    pts
}

fn detector_oracle() -> Outcome {
    let cfg = DetectorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(1..300);
        let v = random_values(&mut rng, n);
        let (m, d) = median_mad(&v);
        let (om, od) = oracle_stats(&v);
        ensure!(rel_close(m, om, 1e-9) && rel_close(d, od, 1e-9), "series {i}: ({m}, {d}) vs oracle ({om}, {od})");
        for &x in v.iter().take(20) {
            let z = modified_zscore(x, m, d, cfg.mad_floor(m));
            let oz = oracle_z(x, om, od, &cfg);
            ensure!(rel_close(z, oz, 1e-9), "series {i}: z {z} vs oracle {oz}");
            worst = worst.max((z - oz).abs() / oz.abs().max(1.0));
        }
    }

    // Full detector path against window means computed here.
    let eval = Window::new(cfg.baseline_windows as i64 * cfg.window_s, (cfg.baseline_windows as i64 + 1) * cfg.window_s);
    let mut events = 0;
    for i in 0..1000 {
        let per = rng.random_range(1..20);
        let series = hourly_series(&mut rng, &cfg, per);
        let means: Vec<f64> = (0..cfg.baseline_windows as i64)
            .map(|w| {
                let vs: Vec<f64> =
                    series.iter().filter(|p| p.ts / cfg.window_s == w).map(|p| p.value).collect();
                vs.iter().sum::<f64>() / vs.len() as f64
            })
            .collect();
        let obs: Vec<f64> = series.iter().filter(|p| eval.contains(p.ts)).map(|p| p.value).collect();
        let observed = obs.iter().sum::<f64>() / obs.len() as f64;
        let (om, od) = oracle_stats(&means);
        let oz = oracle_z(observed, om, od, &cfg);
        let got = detect("e", "pps_in", &series, &cfg, eval).map_err(|e| e.to_string())?;
        let borderline = (oz.abs() - cfg.z_warn).abs() < 1e-6;
        if !borderline {
            ensure!(got.len() == usize::from(oz.abs() >= cfg.z_warn), "series {i}: {} events, oracle z {oz}", got.len());
        }
        if let Some(e) = got.first() {
            ensure!(rel_close(e.score, oz, 1e-9), "series {i}: score {} vs oracle {oz}", e.score);
            events += 1;
        }
    }

    // Affine maps a*x + b (a != 0) keep |z| and flip the sign for a < 0.
    let mut affine = 0;
    while affine < 100 {
        let series = hourly_series(&mut rng, &cfg, 6);
        let base = detect("e", "pps_in", &series, &cfg, eval).map_err(|e| e.to_string())?;
        let a = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let b = rng.random_range(-1e4..1e4);
        let mapped: Vec<Point> = series.iter().map(|p| Point::raw(p.ts, a * p.value + b)).collect();
        let after = detect("e", "pps_in", &mapped, &cfg, eval).map_err(|e| e.to_string())?;
        // Scores are compared through the exposed statistics, which also
        // cover windows that raised no event.
        let window_means = |s: &[Point]| -> (Vec<f64>, f64) {
            let m = (0..cfg.baseline_windows as i64)
                .map(|w| {
                    let vs: Vec<f64> = s.iter().filter(|p| p.ts / cfg.window_s == w).map(|p| p.value).collect();
                    vs.iter().sum::<f64>() / vs.len() as f64
                })
                .collect();
            let o: Vec<f64> = s.iter().filter(|p| eval.contains(p.ts)).map(|p| p.value).collect();
            (m, o.iter().sum::<f64>() / o.len() as f64)
        };
        let (m0, x0) = window_means(&series);
        let (m1, x1) = window_means(&mapped);
        let (med0, mad0) = median_mad(&m0);
        let (med1, mad1) = median_mad(&m1);
        let z0 = modified_zscore(x0, med0, mad0, cfg.mad_floor(med0));
        let z1 = modified_zscore(x1, med1, mad1, cfg.mad_floor(med1));
        ensure!(rel_close(z1, a.signum() * z0, 1e-6), "affine {affine}: z {z0} -> {z1} under a={a}, b={b}");
        if (z0.abs() - cfg.z_warn).abs() > 1e-6 {
            ensure!(base.len() == after.len(), "affine {affine}: {} events -> {}", base.len(), after.len());
            if let (Some(e0), Some(e1)) = (base.first(), after.first()) {
                let flipped = if a < 0.0 {
                    match e0.direction {
                        Direction::High => Direction::Low,
                        Direction::Low => Direction::High,
                    }
                } else {
                    e0.direction
                };
                ensure!(e1.direction == flipped && e1.severity == e0.severity, "affine {affine}: {e0:?} -> {e1:?}");
            }
        }
        affine += 1;
    }
    Ok(format!("1000 stat series (max rel err {worst:.1e}), 1000 detector series ({events} events), {affine} affine maps"))
}

// ---------------------------------------------------------------------------

fn injection_recall() -> Outcome {
    let mut cfg = SynthConfig::default();
    cfg.scenarios = default_scenarios(&cfg, 12, cfg.seed);
    let kinds: BTreeSet<_> = cfg.scenarios.iter().map(|s| s.kind).collect();
    ensure!(cfg.scenarios.len() == 12 && kinds.len() == 4, "fixture has {} faults of {} kinds", cfg.scenarios.len(), kinds.len());
    let ds = generate(&cfg).map_err(|e| e.to_string())?;
    let stores = ds.stores();
    let refs: Vec<&Store> = stores.iter().collect();
    let sweep = detection_sweep(&refs, &DetectorConfig::default(), cfg.start_ts + DAY, cfg.end_ts())?;
    let s = score_detection(&cfg.scenarios, &sweep);
    ensure!(s.recall >= 0.9, "recall {:.3} < 0.9; missed {:?}", s.recall, s.missed);
    ensure!(s.false_event_rate <= 0.01, "false-event rate {:.4} > 0.01", s.false_event_rate);
    Ok(format!(
        "recall {:.3} ({}/{}), false-event rate {:.4} ({} of {} clean series-windows)",
        s.recall, s.detected, s.faults, s.false_event_rate, s.false_events, s.clean_series_windows
    ))
}

// ---------------------------------------------------------------------------

fn fault_localization() -> Outcome {
    const CASES: &[(usize, i64, i64)] = &[
        (0, 2 * HOUR, 300),
        (7, 5 * HOUR + 600, 900),
        (19, 9 * HOUR + 1200, 450),
        (33, 13 * HOUR, 600),
        (48, 17 * HOUR + 2400, 750),
        (26, 20 * HOUR + 60, 300),
    ];
    let mut correct = 0;
    for &(iface, offset, lag) in CASES {
        let mut cfg = SynthConfig { days: 2, seed: 11 + iface as u64, ..SynthConfig::default() };
        let pair = correlated_pair(&cfg, iface, cfg.start_ts + DAY + offset, lag);
        cfg.scenarios = pair.to_vec();
        let ds = generate(&cfg).map_err(|e| e.to_string())?;
        let stores: Vec<_> = ds.stores().into_iter().map(Arc::new).collect();
        let topo = Arc::new(ds.topology.clone());
        let backend: Arc<dyn ModelBackend> =
            Arc::new(netagent_core::llm::ScriptedBackend::from_text("* -> say:ok").map_err(|e| e.to_string())?);
        let rt = netagent_core::agent::AgentRuntime::new(
            &stores,
            backend,
            topo.clone(),
            |_| DetectorConfig::default(),
            Arc::new(AuditLog::in_memory()),
            8,
        );
        let mut book = IncidentBook::default();
        let mut start = pair[0].onset_ts.div_euclid(HOUR) * HOUR - HOUR;
        let last = (pair[1].end_ts() + HOUR).min(cfg.end_ts() - HOUR);
        while start < last {
            let w = Window::new(start, start + HOUR);
            let reports = rt.tick_all(w).into_iter().filter_map(|(_, r)| r.ok().and_then(|t| t.report)).collect();
            book.ingest(reports, &topo, w.end);
            start += HOUR;
        }
        let (port, target) = (&pair[0].target, &pair[1].target);
        let touching: Vec<_> = book
            .list(None)
            .into_iter()
            .filter(|i| i.events().any(|(_, e)| &e.entity_id == port || &e.entity_id == target))
            .collect();
        ensure!(touching.len() == 1, "case {iface}: {} incidents touch {port}/{target}", touching.len());
        let inc = touching[0];
        ensure!(
            inc.members.contains_key(&DbKind::Optical) && inc.members.contains_key(&DbKind::Interface),
            "case {iface}: incident lacks optical or interface members"
        );
        let top = &inc.hypotheses[0];
        ensure!(
            &top.entity_id == port && top.db_kind == DbKind::Optical && top.label.starts_with("optical degradation"),
            "case {iface}: top hypothesis {top:?}"
        );
        correct += 1;
    }
    Ok(format!("top-1 {correct}/{} correlated scenarios", CASES.len()))
}

// ---------------------------------------------------------------------------

fn isolation_soundness() -> Outcome {
    let st = isolation_fuzz::run(10_000, 2024);
    ensure!(st.reference_misses == 0, "reference missed {} injections", st.reference_misses);
    ensure!(st.leaks == 0, "{} false-pass verdicts", st.leaks);
    ensure!(st.verdict_mismatches == 0, "{} verdict/send mismatches", st.verdict_mismatches);
    ensure!(st.injected == st.injected_blocked, "{} of {} injections blocked", st.injected_blocked, st.injected);

    // End-to-end: a scripted session over the real gateway, then the audit log.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig { days: 2, ..SynthConfig::default() };
    let ds = generate(&cfg).map_err(|e| e.to_string())?;
    let config = write_fixture(dir.path(), &ds, "");
    let gw = GatewayProcess::start(&config);
    let questions = [
        "summarize all interfaces",
        "what is wrong with flows and optical power on booth03-eth1?",
        "list the optical transceivers",
        "how many flow sources are there?",
        "diagnose booth07-eth0 errors",
    ];
    let mut sid: Option<String> = None;
    for q in questions {
        let mut body = json!({"message": q});
        if let Some(s) = &sid {
            body["session_id"] = json!(s);
        }
        let (status, r) = post(&gw.base, "/api/chat", &body);
        ensure!(status == 200, "chat {q:?} -> {status}: {r}");
        sid = r["session_id"].as_str().map(str::to_string);
    }
    gw.kill();
    let text = std::fs::read_to_string(dir.path().join("audit.jsonl")).map_err(|e| e.to_string())?;
    let records: Vec<AuditRecord> =
        text.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (mut reads, mut outside, mut rejected) = (0, 0, 0);
    let mut agents = BTreeSet::new();
    for r in &records {
        match &r.event {
            AuditEvent::ToolCall { store_reads, .. } => {
                agents.insert(r.actor.clone());
                for s in store_reads {
                    reads += 1;
                    if s != &r.actor {
                        outside += 1;
                    }
                }
            }
            AuditEvent::Message { verdict, .. } if verdict != "pass" => rejected += 1,
            _ => {}
        }
    }
    ensure!(outside == 0, "{outside} of {reads} store reads outside the reading agent's scope");
    ensure!(reads > 0 && agents.len() == 3, "audit log too thin: {reads} reads by {agents:?}");
    Ok(format!(
        "fuzz: {} messages, {} delivered, {} injections all blocked, 0 false passes; audit: {} records, {reads} store reads by {} agents, 0 out of scope, {rejected} rejected messages",
        st.messages,
        st.delivered,
        st.injected,
        records.len(),
        agents.len()
    ))
}

// ---------------------------------------------------------------------------

fn strip_session(mut v: Value) -> Value {
    v.as_object_mut().map(|o| o.remove("session_id"));
    v
}

/// Session turns without wall-clock timestamps.
fn transcript(session: &Value) -> Value {
    let mut turns = session["turns"].clone();
    for t in turns.as_array_mut().into_iter().flatten() {
        t.as_object_mut().map(|o| o.remove("ts"));
    }
    turns
}

fn numeric_tokens(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if !b[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = if i > 0 && b[i - 1] == b'-' { i - 1 } else { i };
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        out.insert(s[start..i].to_string());
    }
    out
}

/// Mean rates of one interface over `w`, from raw counters.
fn oracle_rates(samples: &[&TelemetrySample], w: Window) -> [f64; 6] {
    let mut sums = [0.0; 6];
    let mut n = 0.0;
    for pair in samples.windows(2) {
        let (p, c) = (pair[0], pair[1]);
        if !w.contains(c.timestamp) {
            continue;
        }
        let dt = (c.timestamp - p.timestamp) as f64;
        let d = |a: u64, b: u64| (b - a) as f64 / dt;
        let r = [
            d(p.pkts_in, c.pkts_in),
            d(p.pkts_out, c.pkts_out),
            d(p.octets_in, c.octets_in) * 8.0,
            d(p.octets_out, c.octets_out) * 8.0,
            d(p.errs_in, c.errs_in),
            d(p.errs_out, c.errs_out),
        ];
        for (s, x) in sums.iter_mut().zip(r) {
            *s += x;
        }
        n += 1.0;
    }
    sums.map(|s| s / n)
}

fn deterministic_chat() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let config = write_fixture(dir.path(), &ds, "");
    let q = "summarize all interfaces";
    let mut runs: Vec<String> = Vec::new();
    let mut views: Vec<String> = Vec::new();
    let mut first: Option<(String, Value)> = None;
    let mut answer = String::new();
    let mut evidence = Vec::new();
    for run in 0..3 {
        let gw = GatewayProcess::start(&config);
        if let Some((sid, turns)) = &first {
            let (status, s) = get(&gw.base, &format!("/api/sessions/{sid}"));
            ensure!(status == 200 && &s["turns"] == turns, "run {run}: session {sid} not restored");
        }
        let (status, a) = post(&gw.base, "/api/chat", &json!({"message": q}));
        ensure!(status == 200, "run {run}: chat -> {status}: {a}");
        let sid = a["session_id"].as_str().unwrap_or_default().to_string();
        let (_, b) = post(&gw.base, "/api/chat", &json!({"session_id": sid, "message": q}));
        ensure!(a["plan_source"] == "model" && b["plan_cache_hit"] == true, "run {run}: plan cache not hit: {}", b["plan_source"]);
        ensure!(a["answer"] == b["answer"], "run {run}: repeated question answered differently");
        let (_, session) = get(&gw.base, &format!("/api/sessions/{sid}"));
        let turns = session["turns"].as_array().map_or(0, Vec::len);
        ensure!(turns == 1 + 2 * 4, "run {run}: {turns} turns, expected system + 2 x (user, call, tool, answer)");
        runs.push(
            serde_json::to_string(&json!([strip_session(a.clone()), strip_session(b), transcript(&session)]))
                .map_err(|e| e.to_string())?,
        );
        views.push(serde_json::to_string(&get(&gw.base, "/api/interfaces").1).map_err(|e| e.to_string())?);
        if run == 0 {
            first = Some((sid, session["turns"].clone()));
            answer = a["answer"].as_str().unwrap_or_default().to_string();
            evidence = a["evidence"].as_array().cloned().unwrap_or_default();
        }
        gw.kill();
    }
    ensure!(runs.iter().all(|r| r == &runs[0]), "answers or transcripts differ across runs");
    ensure!(views.iter().all(|v| v == &views[0]), "GET /api/interfaces differs after restart");

    // Grounding: every number in the answer appears in the tool evidence.
    let evidence_text: String = evidence.iter().map(|e| e["result"].as_str().unwrap_or_default()).collect::<Vec<_>>().join(" ");
    let known = numeric_tokens(&evidence_text);
    let ungrounded: Vec<_> = numeric_tokens(&answer).into_iter().filter(|t| !known.contains(t)).collect();
    ensure!(ungrounded.is_empty(), "numbers not in evidence: {ungrounded:?}");
    for e in &evidence {
        let digest = netagent_gateway::app::digest(e["result"].as_str().unwrap_or_default());
        ensure!(e["result_digest"] == json!(digest), "evidence digest mismatch");
    }

    // Rates in the answer equal an independent recomputation from counters.
    let (lo, hi) = answer
        .split("for window ")
        .nth(1)
        .and_then(|s| s.split(':').next())
        .and_then(|s| s.split_once(".."))
        .ok_or("answer names no window")?;
    let w = Window::new(lo.parse().map_err(|_| "bad window")?, hi.parse().map_err(|_| "bad window")?);
    let mut by_iface: BTreeMap<&str, Vec<&TelemetrySample>> = BTreeMap::new();
    for s in &ds.interface {
        by_iface.entry(s.interface_id.as_str()).or_default().push(s);
    }
    let mut rows = 0;
    for line in answer.lines() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next().filter(|id| by_iface.contains_key(id)) else { continue };
        let vals: Vec<f64> = parts.map(|p| p.parse().unwrap_or(f64::NAN)).collect();
        let want = oracle_rates(&by_iface[id], w);
        ensure!(vals.len() == 6, "row {id}: {line:?}");
        for (got, want) in vals.iter().zip(want) {
            ensure!((got - want).abs() <= 1e-6 + 1e-12 * want.abs(), "row {id}: {got} vs oracle {want}");
        }
        rows += 1;
    }
    ensure!(rows == 50, "answer lists {rows} interfaces");
    Ok(format!(
        "3 runs, 2 restarts, identical answers/transcripts ({} bytes); {rows} rows equal counter oracle; all numbers grounded",
        runs[0].len()
    ))
}

// ---------------------------------------------------------------------------

fn durability() -> Outcome {
    let cfg = SynthConfig { n_interfaces: 7, days: 1, ..SynthConfig::default() };
    let ds = generate(&cfg).map_err(|e| e.to_string())?;
    let store = Store::new(DbKind::Interface, "interface");
    store
        .append_all(ds.interface.iter().take(10_000).cloned().map(Into::into))
        .map_err(|e| e.to_string())?;
    ensure!(store.record_count() == 10_000, "{} records", store.record_count());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("interface.nwts");
    store.persist(&path).map_err(|e| e.to_string())?;
    let back = Store::open(&path).map_err(|e| e.to_string())?;
    ensure!(back.snapshot() == store.snapshot(), "records differ after reopen");

    let entities = store.list_entities();
    let metrics = netagent_core::store::metric_names(DbKind::Interface);
    let (lo, hi) = store.time_coverage().ok_or("empty store")?;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut points = 0;
    for i in 0..20 {
        let t0 = rng.random_range(lo..hi);
        let t1 = rng.random_range(t0 + 1..=hi + 1);
        let mut q = WindowQuery::new(metrics[rng.random_range(0..metrics.len())], t0, t1);
        if rng.random_bool(0.7) {
            q = q.entity(entities[rng.random_range(0..entities.len())].as_str());
        }
        if rng.random_bool(0.5) {
            q = q.step(rng.random_range(60..7200));
        }
        let a = store.query_window(&q).map_err(|e| e.to_string())?;
        let b = back.query_window(&q).map_err(|e| e.to_string())?;
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.ts == y.ts && x.count == y.count && x.value.to_bits() == y.value.to_bits());
        ensure!(same, "query {i} {q:?} differs");
        points += a.len();
    }
    Ok(format!("10000 records round-tripped; 20 random queries ({points} points) bit-identical"))
}

// ---------------------------------------------------------------------------

/// A model that never answers: every turn is one to three tool calls.
struct AlwaysTool {
    rng: Mutex<ChaCha8Rng>,
}

impl ModelBackend for AlwaysTool {
    fn complete(&self, _history: &[ChatTurn], _tools: &[ToolSchema]) -> Result<ChatTurn, BackendError> {
        const NAMES: &[&str] = &["list_entities", "query_window", "detect_anomalies", "summarize_entities", "drop_table"];
        let mut rng = self.rng.lock();
        let calls = (0..rng.random_range(1..=3))
            .map(|i| {
                let mut args = Map::new();
                if rng.random_bool(0.5) {
                    args.insert("metric".into(), json!("pps_in"));
                }
                ToolCall::new(format!("c{i}"), NAMES[rng.random_range(0..NAMES.len())], args)
            })
            .collect();
        Ok(ChatTurn::assistant_calls(calls))
    }

    fn describe(&self) -> String {
        "always-tool".into()
    }
}

fn loop_termination() -> Outcome {
    let cfg = SynthConfig { n_interfaces: 4, days: 1, cadence_s: 300, ..SynthConfig::default() };
    let stores: Vec<Arc<Store>> = generate(&cfg).map_err(|e| e.to_string())?.stores().into_iter().map(Arc::new).collect();
    let mut steps = BTreeSet::new();
    for trial in 0..100u64 {
        let store = stores[(trial % 3) as usize].clone();
        let backend = Arc::new(AlwaysTool { rng: Mutex::new(ChaCha8Rng::seed_from_u64(trial)) });
        let agent = ScopedAgent::new(
            AgentSpec::scoped(&store),
            store,
            DetectorConfig::default(),
            backend,
            Arc::new(AuditLog::in_memory()),
        )
        .with_step_budget(8);
        let out = agent.handle_query("what is wrong?", &[]).map_err(|e| e.to_string())?;
        ensure!(out.partial, "trial {trial}: not flagged partial");
        ensure!(out.steps <= 8, "trial {trial}: {} steps", out.steps);
        steps.insert(out.steps);
    }
    Ok(format!("100/100 trials stopped within budget 8 with a partial flag (steps used: {steps:?})"))
}
