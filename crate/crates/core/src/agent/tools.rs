//! Tools a scoped agent may run against its own store.
//!
//! Every tool result is a JSON object. Values are aggregates (means,
//! window statistics, events); no tool hands out raw records.

use crate::detect::{detect, forecast_next, window_stats, AnomalyEvent, DetectError, DetectorConfig, Window};
use crate::llm::{ToolCall, ToolSchema};
use crate::store::{metric_names, Store, WindowQuery};
use crate::telemetry::{DbKind, Timestamp};
use serde_json::{json, Map, Value};
use std::fmt::Write as _;

pub const LIST_ENTITIES: &str = "list_entities";
pub const QUERY_WINDOW: &str = "query_window";
pub const WINDOW_STATS: &str = "window_stats";
pub const DETECT_ANOMALIES: &str = "detect_anomalies";
pub const FORECAST_NEXT: &str = "forecast_next";
pub const SUMMARIZE_ENTITIES: &str = "summarize_entities";
pub const ASK_AGENT: &str = "ask_agent";
pub const LIST_AGENTS: &str = "list_agents";

pub const SCOPED_TOOLS: &[&str] =
    &[LIST_ENTITIES, QUERY_WINDOW, WINDOW_STATS, DETECT_ANOMALIES, FORECAST_NEXT, SUMMARIZE_ENTITIES];
pub const COORDINATOR_TOOLS: &[&str] = &[ASK_AGENT, LIST_AGENTS];

/// Points returned by `query_window` before the result is cut off.
pub const MAX_POINTS: usize = 500;

/// Metrics the detector runs over on each tick.
pub fn detection_metrics(kind: DbKind) -> &'static [&'static str] {
    match kind {
        DbKind::Interface => &["pps_in", "pps_out", "bps_in", "bps_out", "eps_in", "eps_out"],
        DbKind::Flow => &["bytes", "packets"],
        DbKind::Optical => &["rx_power_dbm", "tx_power_dbm"],
    }
}

/// Metrics shown per entity by `summarize_entities`.
pub fn summary_metrics(kind: DbKind) -> &'static [&'static str] {
    match kind {
        DbKind::Interface => &["pps_in", "pps_out", "bps_in", "bps_out", "eps_in", "eps_out"],
        DbKind::Flow => &["bytes", "packets", "duration_s"],
        DbKind::Optical => &["rx_power_dbm", "tx_power_dbm"],
    }
}

fn schema(name: &str, description: &str, properties: Value, required: &[&str]) -> ToolSchema {
    ToolSchema {
        name: name.into(),
        description: description.into(),
        parameters: json!({"type": "object", "properties": properties, "required": required}),
    }
}

pub fn tool_schema(name: &str) -> Option<ToolSchema> {
    let window = json!({"type": "integer", "description": "seconds since epoch"});
    Some(match name {
        LIST_ENTITIES => schema(LIST_ENTITIES, "List the entity ids in this database.", json!({}), &[]),
        QUERY_WINDOW => schema(
            QUERY_WINDOW,
            "Metric values in [t_start, t_end), optionally for one entity and averaged on a step grid.",
            json!({"entity_id": {"type": "string"}, "metric": {"type": "string"},
                   "t_start": window, "t_end": window, "step_s": {"type": "integer"}}),
            &["metric", "t_start", "t_end"],
        ),
        WINDOW_STATS => schema(
            WINDOW_STATS,
            "Mean, median, MAD, min and max of one entity's metric in [t_start, t_end).",
            json!({"entity_id": {"type": "string"}, "metric": {"type": "string"},
                   "t_start": window, "t_end": window}),
            &["entity_id", "metric", "t_start", "t_end"],
        ),
        DETECT_ANOMALIES => schema(
            DETECT_ANOMALIES,
            "Run anomaly detection for a window (default: newest complete window).",
            json!({"window_start": window, "window_end": window,
                   "entity_id": {"type": "string"}, "metric": {"type": "string"}}),
            &[],
        ),
        FORECAST_NEXT => schema(
            FORECAST_NEXT,
            "Forecast the mean of the window after the newest complete one.",
            json!({"entity_id": {"type": "string"}, "metric": {"type": "string"}}),
            &["entity_id", "metric"],
        ),
        SUMMARIZE_ENTITIES => schema(
            SUMMARIZE_ENTITIES,
            "Per-entity means over a window (default: newest complete window).",
            json!({"window_start": window, "window_end": window}),
            &[],
        ),
        ASK_AGENT => schema(
            ASK_AGENT,
            "Ask a database agent a question.",
            json!({"agent_id": {"type": "string"}, "question": {"type": "string"}}),
            &["agent_id", "question"],
        ),
        LIST_AGENTS => schema(LIST_AGENTS, "List the registered database agents.", json!({}), &[]),
        _ => return None,
    })
}

/// Newest aligned window of length `window_s` that ends at or before the
/// store's latest timestamp plus one second.
pub fn latest_complete_window(store: &Store, window_s: i64) -> Option<Window> {
    let (_, hi) = store.time_coverage()?;
    let end = (hi + 1).div_euclid(window_s) * window_s;
    Some(Window::new(end - window_s, end))
}

/// Result of running the detector over a whole scope.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScopeDetection {
    pub events: Vec<AnomalyEvent>,
    /// Series evaluated with a full baseline.
    pub evaluated: usize,
    /// The evaluated (entity, metric) pairs.
    pub series: Vec<(String, String)>,
    /// (entity, metric) pairs skipped for lack of baseline.
    pub skipped: Vec<(String, String)>,
}

/// Runs [`detect`] over every (entity, metric) in scope, or the given subset.
pub fn detect_scope(
    store: &Store,
    cfg: &DetectorConfig,
    window: Window,
    entity: Option<&str>,
    metric: Option<&str>,
) -> Result<ScopeDetection, String> {
    let kind = store.kind();
    let entities = match entity {
        Some(e) if store.has_entity(e) => vec![e.to_string()],
        Some(e) => return Err(format!("unknown entity `{e}` in {}", store.name())),
        None => store.list_entities(),
    };
    let metrics: Vec<&str> = match metric {
        Some(m) if metric_names(kind).contains(&m) => vec![m],
        Some(m) => return Err(format!("unknown metric `{m}` for {kind} data")),
        None => detection_metrics(kind).to_vec(),
    };
    let history_start = window.start - cfg.window_s * cfg.baseline_windows as i64;
    let mut out = ScopeDetection::default();
    for e in &entities {
        for m in &metrics {
            let series = store
                .query_window(&WindowQuery::new(*m, history_start, window.end).entity(e.as_str()))
                .map_err(|err| err.to_string())?;
            match detect(e, m, &series, cfg, window) {
                Ok(evs) => {
                    out.evaluated += 1;
                    out.series.push((e.clone(), m.to_string()));
                    out.events.extend(evs);
                }
                Err(DetectError::InsufficientBaseline { .. }) => out.skipped.push((e.clone(), m.to_string())),
                Err(err) => return Err(err.to_string()),
            }
        }
    }
    Ok(out)
}

/// An entity id with its `(metric, mean)` pairs.
pub type EntitySummary = (String, Vec<(String, Option<f64>)>);

/// Per-entity means over `window` for [`summary_metrics`].
pub fn summarize(store: &Store, window: Window) -> Result<Vec<EntitySummary>, String> {
    let kind = store.kind();
    let mut rows = Vec::new();
    for e in store.list_entities() {
        let mut cols = Vec::new();
        for m in summary_metrics(kind) {
            let pts = store
                .query_window(&WindowQuery::new(*m, window.start, window.end).entity(e.as_str()))
                .map_err(|err| err.to_string())?;
            let mean = (!pts.is_empty()).then(|| pts.iter().map(|p| p.value).sum::<f64>() / pts.len() as f64);
            cols.push((m.to_string(), mean));
        }
        rows.push((e, cols));
    }
    Ok(rows)
}

/// Outcome of one tool execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub content: Value,
    pub is_error: bool,
    /// Whether the store was read.
    pub read_store: bool,
    /// Detection result, when the tool ran the detector.
    pub detection: Option<(Window, Vec<AnomalyEvent>)>,
}

impl ToolOutput {
    fn ok(content: Value) -> Self {
        Self { content, is_error: false, read_store: true, detection: None }
    }

    fn error(message: impl Into<String>, read_store: bool) -> Self {
        Self { content: json!({"error": message.into()}), is_error: true, read_store, detection: None }
    }
}

fn get_str<'a>(args: &'a Map<String, Value>, key: &str) -> Result<Option<&'a str>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(format!("argument `{key}` must be a string, got {other}")),
    }
}

fn get_int(args: &Map<String, Value>, key: &str) -> Result<Option<i64>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0 && f.is_finite()).map(|f| f as i64))
            .map(Some)
            .ok_or_else(|| format!("argument `{key}` must be an integer, got {v}")),
    }
}

fn require<T>(v: Option<T>, key: &str) -> Result<T, String> {
    v.ok_or_else(|| format!("missing argument `{key}`"))
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Window from optional `window_start`/`window_end` arguments, falling back
/// to the newest complete window.
fn window_arg(store: &Store, cfg: &DetectorConfig, args: &Map<String, Value>) -> Result<Option<Window>, String> {
    let start = get_int(args, "window_start")?;
    let end = get_int(args, "window_end")?;
    Ok(match (start, end) {
        (Some(s), Some(e)) if e > s => Some(Window::new(s, e)),
        (Some(_), Some(_)) => return Err("window_end must be after window_start".into()),
        (Some(s), None) => Some(Window::new(s, s + cfg.window_s)),
        (None, Some(e)) => Some(Window::new(e - cfg.window_s, e)),
        (None, None) => latest_complete_window(store, cfg.window_s),
    })
}

fn run(store: &Store, cfg: &DetectorConfig, call: &ToolCall) -> Result<ToolOutput, String> {
    let args = &call.arguments;
    match call.tool_name.as_str() {
        LIST_ENTITIES => {
            let entities = store.list_entities();
            Ok(ToolOutput::ok(json!({"store": store.name(), "count": entities.len(), "entities": entities})))
        }
        QUERY_WINDOW => {
            let metric = require(get_str(args, "metric")?, "metric")?;
            let t_start = require(get_int(args, "t_start")?, "t_start")?;
            let t_end = require(get_int(args, "t_end")?, "t_end")?;
            let mut q = WindowQuery::new(metric, t_start, t_end);
            if let Some(e) = get_str(args, "entity_id")? {
                q = q.entity(e);
            }
            if let Some(step) = get_int(args, "step_s")? {
                q = q.step(step);
            }
            let pts = store.query_window(&q).map_err(|e| e.to_string())?;
            let total = pts.len();
            let points: Vec<Value> = pts.iter().take(MAX_POINTS).map(|p| json!([p.ts, round6(p.value)])).collect();
            Ok(ToolOutput::ok(json!({
                "metric": metric, "entity_id": q.entity_id, "t_start": t_start, "t_end": t_end,
                "count": total, "truncated": total > MAX_POINTS, "points": points,
            })))
        }
        WINDOW_STATS => {
            let entity = require(get_str(args, "entity_id")?, "entity_id")?;
            let metric = require(get_str(args, "metric")?, "metric")?;
            let w = Window::new(require(get_int(args, "t_start")?, "t_start")?, require(get_int(args, "t_end")?, "t_end")?);
            let pts = store
                .query_window(&WindowQuery::new(metric, w.start, w.end).entity(entity))
                .map_err(|e| e.to_string())?;
            let st = window_stats(&pts, w).map_err(|e| e.to_string())?;
            Ok(ToolOutput::ok(json!({
                "entity_id": entity, "metric": metric, "window": w, "count": st.count,
                "mean": round6(st.mean), "median": round6(st.median), "mad": round6(st.mad),
                "min": round6(st.min), "max": round6(st.max),
            })))
        }
        DETECT_ANOMALIES => {
            let Some(w) = window_arg(store, cfg, args)? else {
                return Ok(ToolOutput::ok(json!({"store": store.name(), "count": 0, "events": [], "note": "no data"})));
            };
            let entity = get_str(args, "entity_id")?;
            let metric = get_str(args, "metric")?;
            let run = detect_scope(store, cfg, w, entity, metric)?;
            let events: Vec<Value> = run
                .events
                .iter()
                .map(|e| {
                    json!({"entity_id": e.entity_id, "metric": e.metric, "severity": e.severity,
                           "direction": e.direction, "kind": e.kind,
                           "observed": round6(e.observed), "score": round6(e.score)})
                })
                .collect();
            let mut out = ToolOutput::ok(json!({
                "store": store.name(), "window": w, "count": events.len(), "events": events,
                "series_evaluated": run.evaluated, "series_skipped": run.skipped.len(),
            }));
            out.detection = Some((w, run.events));
            Ok(out)
        }
        FORECAST_NEXT => {
            let entity = require(get_str(args, "entity_id")?, "entity_id")?;
            let metric = require(get_str(args, "metric")?, "metric")?;
            let latest = latest_complete_window(store, cfg.window_s).ok_or("store is empty")?;
            let history_start = latest.end - cfg.window_s * (cfg.baseline_windows as i64 + 24);
            let pts = store
                .query_window(&WindowQuery::new(metric, history_start, latest.end).entity(entity))
                .map_err(|e| e.to_string())?;
            let f = forecast_next(&pts, cfg, latest.end).map_err(|e| e.to_string())?;
            Ok(ToolOutput::ok(json!({
                "entity_id": entity, "metric": metric, "window": f.window, "mean": round6(f.mean),
                "uncertainty": round6(f.uncertainty), "method": f.method,
            })))
        }
        SUMMARIZE_ENTITIES => {
            let Some(w) = window_arg(store, cfg, args)? else {
                return Ok(ToolOutput::ok(json!({"store": store.name(), "count": 0, "rows": [], "text": ""})));
            };
            let rows = summarize(store, w)?;
            let metrics = summary_metrics(store.kind());
            let mut text = format!("entity {}\n", metrics.join(" "));
            let json_rows: Vec<Value> = rows
                .iter()
                .map(|(e, cols)| {
                    let _ = write!(text, "{e}");
                    let mut row = Map::new();
                    row.insert("entity_id".into(), json!(e));
                    for (m, v) in cols {
                        let v = v.map(round6);
                        match v {
                            Some(x) => {
                                let _ = write!(text, " {x}");
                            }
                            None => text.push_str(" -"),
                        }
                        row.insert(m.clone(), json!(v));
                    }
                    text.push('\n');
                    Value::Object(row)
                })
                .collect();
            Ok(ToolOutput::ok(json!({
                "store": store.name(), "window": w, "count": json_rows.len(), "rows": json_rows, "text": text,
            })))
        }
        other => Err(format!("unknown tool `{other}`")),
    }
}

/// Executes `call` against `store`. A `store` argument naming any other
/// database is refused without reading.
pub fn execute(store: &Store, cfg: &DetectorConfig, call: &ToolCall) -> ToolOutput {
    match call.arguments.get("store") {
        None | Some(Value::Null) => {}
        Some(Value::String(s)) if s == store.name() => {}
        Some(other) => {
            return ToolOutput::error(format!("store {other} is outside this agent's scope `{}`", store.name()), false)
        }
    }
    let mut call = call.clone();
    call.arguments.remove("store");
    if !SCOPED_TOOLS.contains(&call.tool_name.as_str()) {
        return ToolOutput::error(format!("unknown tool `{}`", call.tool_name), false);
    }
    run(store, cfg, &call).unwrap_or_else(|e| ToolOutput::error(e, true))
}

/// Newest complete window across several stores.
pub fn latest_window_of(stores: &[&Store], window_s: i64) -> Option<Window> {
    let hi: Timestamp = stores.iter().filter_map(|s| s.time_coverage()).map(|(_, hi)| hi).max()?;
    let end = (hi + 1).div_euclid(window_s) * window_s;
    Some(Window::new(end - window_s, end))
}
