//! Shared service state and the HTTP routes.

use crate::config::ServiceConfig;
use crate::session::{Session, SessionStore};
use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use netagent_core::agent::tools::{latest_complete_window, latest_window_of, summary_metrics};
use netagent_core::agent::{
    AgentError, AgentPlan, AgentRuntime, AuditLog, Finding, PlanSource, ToolOutcome, TranscriptEntry,
};
use netagent_core::correlate::{Incident, IncidentBook, IncidentError, TopologyMap};
use netagent_core::detect::{forecast_next, AnomalyEvent, ForecastMethod, Window};
use netagent_core::llm::{build_backend, BackendError, ChatTurn, ModelBackend};
use netagent_core::store::{Store, WindowQuery};
use netagent_core::telemetry::{parse_record, DbKind, Timestamp};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// Tick events older than this, relative to the newest tick, are dropped.
pub const EVENT_RETENTION_S: i64 = 48 * 3600;
/// Largest ingest body accepted.
pub const MAX_INGEST_BYTES: usize = 64 << 20;
const MAX_REPORTED_BAD_LINES: usize = 50;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("topology: {0}")]
    Topology(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("session log {path}: {source}")]
    SessionLog { path: PathBuf, source: std::io::Error },
    #[error("audit log {path}: {source}")]
    AuditLog { path: PathBuf, source: std::io::Error },
}

pub fn now_s() -> Timestamp {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

/// One configured store. `store` is `None` when the file failed to open;
/// its agent is then left out and the service runs degraded.
pub struct StoreSlot {
    pub kind: DbKind,
    pub path: PathBuf,
    pub store: Option<Arc<Store>>,
    pub error: Option<String>,
    dirty: AtomicBool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickSummary {
    pub window: Option<Window>,
    pub events: usize,
    pub reports: Vec<String>,
    /// Per-agent failures; the other agents still ran.
    pub errors: BTreeMap<String, String>,
    pub new_incidents: Vec<String>,
    pub incidents: usize,
}

/// Everything a tick produces, persisted to the state file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TickState {
    book: IncidentBook,
    events: Vec<AnomalyEvent>,
    last_tick: Option<TickSummary>,
}

pub struct AppState {
    pub cfg: ServiceConfig,
    pub slots: Vec<StoreSlot>,
    pub runtime: Arc<AgentRuntime>,
    pub backend: Arc<dyn ModelBackend>,
    pub topology: Arc<TopologyMap>,
    pub sessions: SessionStore,
    tick: Mutex<TickState>,
    /// Serializes ticks so incident updates are atomic per tick.
    tick_gate: Mutex<()>,
    started: std::time::Instant,
}

impl AppState {
    pub fn build(cfg: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let topology = match &cfg.topology {
            Some(p) => TopologyMap::load(p).map_err(|e| StartupError::Topology(e.to_string()))?,
            None => TopologyMap::new(),
        };
        let topology = Arc::new(topology);
        let slots: Vec<StoreSlot> = DbKind::ALL
            .into_iter()
            .map(|kind| {
                let path = cfg.stores.get(kind).to_path_buf();
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    let _ = std::fs::create_dir_all(dir);
                }
                let (store, error) = match Store::open_or_create(&path, kind) {
                    Ok(s) => {
                        tracing::info!(%kind, path = %path.display(), records = s.record_count(), "store opened");
                        (Some(Arc::new(s)), None)
                    }
                    Err(e) => {
                        tracing::error!(%kind, path = %path.display(), error = %e, "store unavailable; agent disabled");
                        (None, Some(e.to_string()))
                    }
                };
                StoreSlot { kind, path, store, error, dirty: AtomicBool::new(false) }
            })
            .collect();
        let backend = build_backend(&cfg.backend)?;
        let audit = match &cfg.audit_log {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    let _ = std::fs::create_dir_all(dir);
                }
                AuditLog::with_file(p).map_err(|source| StartupError::AuditLog { path: p.clone(), source })?
            }
            None => AuditLog::in_memory(),
        };
        let stores: Vec<Arc<Store>> = slots.iter().filter_map(|s| s.store.clone()).collect();
        let runtime = Arc::new(AgentRuntime::new(
            &stores,
            backend.clone(),
            topology.clone(),
            |k| cfg.detector_for(k),
            Arc::new(audit),
            cfg.step_budget,
        ));
        let sessions = SessionStore::open(&cfg.session_log, cfg.session_idle_expiry_s as i64)
            .map_err(|source| StartupError::SessionLog { path: cfg.session_log.clone(), source })?;
        let tick = load_state(&cfg.state_file, cfg.gap_s);
        Ok(Arc::new(Self {
            cfg,
            slots,
            runtime,
            backend,
            topology,
            sessions,
            tick: Mutex::new(tick),
            tick_gate: Mutex::new(()),
            started: std::time::Instant::now(),
        }))
    }

    pub fn store(&self, kind: DbKind) -> Option<&Arc<Store>> {
        self.slots.iter().find(|s| s.kind == kind)?.store.as_ref()
    }

    fn slot(&self, kind: DbKind) -> &StoreSlot {
        self.slots.iter().find(|s| s.kind == kind).expect("one slot per kind")
    }

    fn window_s(&self) -> i64 {
        self.cfg.detector_for(DbKind::Interface).window_s
    }

    /// Writes stores with appended records to disk. Returns how many
    /// were written.
    pub fn flush_stores(&self) -> usize {
        let mut n = 0;
        for slot in &self.slots {
            let Some(store) = &slot.store else { continue };
            if slot.dirty.swap(false, Ordering::AcqRel) {
                match store.persist(&slot.path) {
                    Ok(()) => n += 1,
                    Err(e) => {
                        slot.dirty.store(true, Ordering::Release);
                        tracing::error!(kind = %slot.kind, error = %e, "store flush failed");
                    }
                }
            }
        }
        if let Err(e) = self.runtime.audit.flush() {
            tracing::warn!(error = %e, "audit flush failed");
        }
        n
    }

    /// Runs every agent over the newest complete window and updates the
    /// incident book. Blocking.
    pub fn run_tick(&self) -> TickSummary {
        let _gate = self.tick_gate.lock();
        let stores: Vec<&Store> = self.slots.iter().filter_map(|s| s.store.as_deref()).collect();
        let mut summary = TickSummary::default();
        for slot in self.slots.iter().filter(|s| s.store.is_none()) {
            summary.errors.insert(slot.kind.as_str().to_string(), slot.error.clone().unwrap_or_default());
        }
        let Some(window) = latest_window_of(&stores, self.window_s()) else {
            tracing::info!("tick skipped: no data");
            return summary;
        };
        summary.window = Some(window);
        let mut reports = Vec::new();
        let mut events = Vec::new();
        for (agent, result) in self.runtime.tick_all(window) {
            match result {
                Ok(out) => {
                    events.extend(out.events);
                    if let Some(r) = out.report {
                        summary.reports.push(r.report_id.clone());
                        reports.push(r);
                    }
                }
                Err(e) => {
                    tracing::warn!(%agent, error = %e, "agent tick failed");
                    summary.errors.insert(agent, e.to_string());
                }
            }
        }
        summary.events = events.len();

        let mut st = self.tick.lock();
        let before: Vec<String> = st.book.list(None).iter().map(|i| i.incident_id.clone()).collect();
        st.book.ingest(reports, &self.topology, window.end);
        for e in events {
            let dup = st.events.iter().any(|x| x.entity_id == e.entity_id && x.metric == e.metric && x.window == e.window);
            if !dup {
                st.events.push(e);
            }
        }
        st.events.retain(|e| e.window.end > window.end - EVENT_RETENTION_S);
        let all = st.book.list(None);
        summary.incidents = all.len();
        summary.new_incidents =
            all.iter().map(|i| i.incident_id.clone()).filter(|id| !before.contains(id)).collect();
        st.last_tick = Some(summary.clone());
        if let Err(e) = save_state(&self.cfg.state_file, &st) {
            tracing::error!(error = %e, "state file write failed");
        }
        tracing::info!(
            window_end = window.end,
            events = summary.events,
            reports = summary.reports.len(),
            new_incidents = summary.new_incidents.len(),
            "tick complete"
        );
        summary
    }
}

fn load_state(path: &Path, gap_s: i64) -> TickState {
    let fresh = || TickState { book: IncidentBook::new(gap_s), ..TickState::default() };
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_else(|e| {
            tracing::warn!(path = %path.display(), error = %e, "state file unreadable; starting empty");
            fresh()
        }),
        Err(_) => fresh(),
    }
}

fn save_state(path: &Path, st: &TickState) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(st).expect("state serializes"))?;
    std::fs::rename(tmp, path)
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<IncidentError> for ApiError {
    fn from(e: IncidentError) -> Self {
        match e {
            IncidentError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown-incident", e.to_string()),
            IncidentError::InvalidTransition { .. } => {
                ApiError::new(StatusCode::CONFLICT, "invalid-transition", e.to_string())
            }
        }
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<AppState>;

// ---------------------------------------------------------------------------
// Router

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/chat", post(chat))
        .route("/sessions/{id}", get(session_view))
        .route("/interfaces", get(interfaces))
        .route("/interfaces/{id}", get(interface_detail))
        .route("/incidents", get(incidents))
        .route("/incidents/{id}", get(incident_detail))
        .route("/incidents/{id}/ack", post(ack))
        .route("/incidents/{id}/resolve", post(resolve))
        .route("/tick", post(tick))
        .route("/ingest/{kind}", post(ingest).layer(DefaultBodyLimit::max(MAX_INGEST_BYTES)))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().nest("/api", api).fallback(static_files).with_state(state)
}

async fn require_token(State(st): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.cfg.auth_token {
        // Paths arrive here with the /api prefix stripped.
        if !matches!(req.uri().path(), "/health" | "/api/health") {
            let expected = format!("Bearer {token}");
            let ok = req.headers().get(header::AUTHORIZATION).is_some_and(|v| v.as_bytes() == expected.as_bytes());
            if !ok {
                return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                    .into_response();
            }
        }
    }
    next.run(req).await
}

// ---------------------------------------------------------------------------
// Health

#[derive(Debug, Serialize, Deserialize)]
pub struct StoreHealth {
    pub kind: DbKind,
    pub path: PathBuf,
    pub records: usize,
    pub entities: usize,
    pub coverage: Option<(Timestamp, Timestamp)>,
    pub error: Option<String>,
}

async fn health(State(st): State<Shared>) -> Json<Value> {
    let st2 = st.clone();
    let reachable = tokio::task::spawn_blocking(move || st2.backend.reachable()).await.unwrap_or(false);
    let stores: Vec<StoreHealth> = st
        .slots
        .iter()
        .map(|s| StoreHealth {
            kind: s.kind,
            path: s.path.clone(),
            records: s.store.as_ref().map_or(0, |x| x.record_count()),
            entities: s.store.as_ref().map_or(0, |x| x.list_entities().len()),
            coverage: s.store.as_ref().and_then(|x| x.time_coverage()),
            error: s.error.clone(),
        })
        .collect();
    let degraded = stores.iter().any(|s| s.error.is_some()) || !reachable;
    let tick = st.tick.lock();
    Json(json!({
        "status": if degraded { "degraded" } else { "ok" },
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "uptime_s": st.started.elapsed().as_secs(),
        "stores": stores,
        "backend": {"description": st.backend.describe(), "reachable": reachable},
        "agents": st.runtime.coordinator.agents().iter().map(|a| a.id().to_string()).collect::<Vec<_>>(),
        "sessions": st.sessions.len(),
        "incidents": tick.book.list(None).len(),
        "last_tick": tick.last_tick,
    }))
}

// ---------------------------------------------------------------------------
// Chat

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub agent_id: String,
    pub step: usize,
    pub tool: String,
    pub arguments: Map<String, Value>,
    pub outcome: ToolOutcome,
    pub is_error: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub store_reads: Vec<String>,
    /// Hex SHA-256 of `result`.
    pub result_digest: String,
    pub result: String,
}

impl From<&TranscriptEntry> for EvidenceRef {
    fn from(e: &TranscriptEntry) -> Self {
        Self {
            agent_id: e.agent_id.clone(),
            step: e.step,
            tool: e.call.tool_name.clone(),
            arguments: e.call.arguments.clone(),
            outcome: e.outcome,
            is_error: e.result.is_error,
            store_reads: e.store_reads.clone(),
            result_digest: digest(&e.result.content),
            result: e.result.content.clone(),
        }
    }
}

pub fn digest(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub answer: String,
    pub partial: bool,
    pub plan_source: PlanSource,
    pub plan_cache_hit: bool,
    pub plan: AgentPlan,
    pub findings: Vec<Finding>,
    pub evidence: Vec<EvidenceRef>,
}

const SYSTEM_CONTEXT: &str = "session started; scoped agents answer from their own database only";

async fn chat(State(st): State<Shared>, body: Result<Json<ChatRequest>, JsonRejection>) -> ApiResult<ChatResponse> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.body_text()))?;
    let message = req.message.trim().to_string();
    if message.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty-message", "message is empty"));
    }
    let session_id = match req.session_id {
        Some(id) => {
            st.sessions
                .get(&id, now_s())
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-session", format!("session {id}")))?;
            id
        }
        None => {
            let id = st.sessions.create(now_s()).map_err(internal)?;
            st.sessions.append(&id, vec![(ChatTurn::system(SYSTEM_CONTEXT), false)], now_s()).map_err(internal)?;
            id
        }
    };

    // One completion per session at a time; later requests queue here.
    let busy = st.sessions.lock_handle(&session_id);
    let _guard = busy.lock().await;
    let session: Session = st
        .sessions
        .get(&session_id, now_s())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-session", format!("session {session_id}")))?;
    let history = session.history();
    let cached = session.plan.clone();
    let st2 = st.clone();
    let q = message.clone();
    let result = tokio::task::spawn_blocking(move || st2.runtime.coordinator.coordinate(&q, &history, cached.as_ref()))
        .await
        .map_err(internal)?;

    let answer = match result {
        Ok(a) => a,
        Err(e) => {
            let (status, code) = match &e {
                AgentError::Backend(BackendError::Unreachable(_)) => {
                    (StatusCode::SERVICE_UNAVAILABLE, "backend-unreachable")
                }
                AgentError::NoAgents => (StatusCode::SERVICE_UNAVAILABLE, "no-agents"),
                AgentError::EmptyQuestion => (StatusCode::BAD_REQUEST, "empty-message"),
                _ => (StatusCode::BAD_GATEWAY, "backend-error"),
            };
            st.sessions.append(&session_id, vec![(ChatTurn::user(&message), true)], now_s()).map_err(internal)?;
            return Err(ApiError::new(status, code, e.to_string()));
        }
    };

    let mut turns = vec![(ChatTurn::user(&message), false)];
    for e in &answer.evidence {
        turns.push((ChatTurn::assistant_calls(vec![e.call.clone()]), false));
        turns.push((ChatTurn::tool(e.result.clone()), false));
    }
    turns.push((ChatTurn::assistant(&answer.answer), false));
    st.sessions.append(&session_id, turns, now_s()).map_err(internal)?;
    if answer.plan_source != PlanSource::Cache {
        st.sessions.set_plan(&session_id, answer.plan.clone()).map_err(internal)?;
    }
    Ok(Json(ChatResponse {
        session_id,
        partial: answer.partial,
        plan_cache_hit: answer.plan_source == PlanSource::Cache,
        plan_source: answer.plan_source,
        evidence: answer.evidence.iter().map(EvidenceRef::from).collect(),
        answer: answer.answer,
        plan: answer.plan,
        findings: answer.findings,
    }))
}

async fn session_view(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Session> {
    st.sessions
        .get(&id, now_s())
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-session", format!("session {id}")))
}

// ---------------------------------------------------------------------------
// Interfaces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceRow {
    pub interface_id: String,
    /// The newest complete window; the rates are means over it.
    pub window: Window,
    pub pps_in: Option<f64>,
    pub pps_out: Option<f64>,
    pub bps_in: Option<f64>,
    pub bps_out: Option<f64>,
    pub eps_in: Option<f64>,
    pub eps_out: Option<f64>,
    pub anomaly_count_24h: usize,
    /// Forecast mean of `pps_in` for the window after `window`.
    pub forecast_pps_in: Option<f64>,
    pub forecast_method: Option<ForecastMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceDetail {
    pub row: InterfaceRow,
    /// Window means per metric over the last 24 windows, as (start, mean).
    pub series: BTreeMap<String, Vec<(Timestamp, f64)>>,
    pub events: Vec<AnomalyEvent>,
    /// Ids of open or acknowledged incidents with an event on this
    /// interface.
    pub incidents: Vec<String>,
    pub port: Option<String>,
    pub neighbors: Vec<String>,
}

fn interface_store(st: &AppState) -> Result<&Arc<Store>, ApiError> {
    let slot = st.slot(DbKind::Interface);
    slot.store.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store-unavailable", slot.error.clone().unwrap_or_default())
    })
}

fn mean_of(store: &Store, entity: &str, metric: &str, w: Window) -> Result<Option<f64>, ApiError> {
    let pts = store.query_window(&WindowQuery::new(metric, w.start, w.end).entity(entity)).map_err(internal)?;
    Ok((!pts.is_empty()).then(|| pts.iter().map(|p| p.value).sum::<f64>() / pts.len() as f64))
}

fn interface_row(st: &AppState, store: &Store, id: &str, window: Window) -> Result<InterfaceRow, ApiError> {
    let cfg = st.cfg.detector_for(DbKind::Interface);
    let mut means = BTreeMap::new();
    for m in summary_metrics(DbKind::Interface) {
        means.insert(*m, mean_of(store, id, m, window)?);
    }
    let horizon = window.end - 24 * 3600;
    let anomaly_count_24h = st
        .tick
        .lock()
        .events
        .iter()
        .filter(|e| e.entity_id == id && e.window.end > horizon && e.window.end <= window.end)
        .count();
    let history_start = window.end - cfg.window_s * (cfg.baseline_windows as i64 + 24);
    let series = store
        .query_window(&WindowQuery::new("pps_in", history_start, window.end).entity(id))
        .map_err(internal)?;
    let forecast = forecast_next(&series, &cfg, window.end).ok();
    Ok(InterfaceRow {
        interface_id: id.to_string(),
        window,
        pps_in: means["pps_in"],
        pps_out: means["pps_out"],
        bps_in: means["bps_in"],
        bps_out: means["bps_out"],
        eps_in: means["eps_in"],
        eps_out: means["eps_out"],
        anomaly_count_24h,
        forecast_pps_in: forecast.as_ref().map(|f| f.mean),
        forecast_method: forecast.map(|f| f.method),
    })
}

async fn interfaces(State(st): State<Shared>) -> ApiResult<Vec<InterfaceRow>> {
    tokio::task::spawn_blocking(move || {
        let store = interface_store(&st)?;
        let Some(window) = latest_complete_window(store, st.window_s()) else {
            return Ok(Json(vec![]));
        };
        let rows =
            store.list_entities().iter().map(|id| interface_row(&st, store, id, window)).collect::<Result<_, _>>()?;
        Ok(Json(rows))
    })
    .await
    .map_err(internal)?
}

async fn interface_detail(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<InterfaceDetail> {
    tokio::task::spawn_blocking(move || {
        let store = interface_store(&st)?;
        let window = latest_complete_window(store, st.window_s()).filter(|_| store.has_entity(&id));
        let Some(window) = window else {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-interface", format!("interface {id}")));
        };
        let row = interface_row(&st, store, &id, window)?;
        let w = st.window_s();
        let from = window.end - 24 * w;
        let mut series = BTreeMap::new();
        for m in summary_metrics(DbKind::Interface) {
            let pts = store.query_window(&WindowQuery::new(*m, from, window.end).entity(id.as_str()).step(w)).map_err(internal)?;
            series.insert(m.to_string(), pts.iter().map(|p| (p.ts, p.value)).collect());
        }
        let tick = st.tick.lock();
        let events: Vec<AnomalyEvent> = tick.events.iter().filter(|e| e.entity_id == id).cloned().collect();
        let incidents = tick
            .book
            .list(None)
            .into_iter()
            .filter(|i| i.status != netagent_core::correlate::IncidentStatus::Resolved)
            .filter(|i| i.events().any(|(_, e)| e.entity_id == id))
            .map(|i| i.incident_id.clone())
            .collect();
        drop(tick);
        let port = st.topology.port_of(&id).map(str::to_string);
        let neighbors = st.topology.neighbors(&id).map(str::to_string).collect();
        Ok(Json(InterfaceDetail { row, series, events, incidents, port, neighbors }))
    })
    .await
    .map_err(internal)?
}

// ---------------------------------------------------------------------------
// Incidents and ticks

#[derive(Debug, Deserialize)]
struct SinceQuery {
    since: Option<Timestamp>,
}

async fn incidents(State(st): State<Shared>, Query(q): Query<SinceQuery>) -> Json<Vec<Incident>> {
    Json(st.tick.lock().book.list(q.since).into_iter().cloned().collect())
}

async fn incident_detail(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Incident> {
    let tick = st.tick.lock();
    let inc = tick.book.get(&id).ok_or(IncidentError::NotFound(id))?;
    Ok(Json(inc.clone()))
}

fn transition(st: &AppState, id: &str, ack: bool) -> Result<Incident, ApiError> {
    let mut tick = st.tick.lock();
    let inc = if ack { tick.book.acknowledge(id)? } else { tick.book.resolve(id)? }.clone();
    if let Err(e) = save_state(&st.cfg.state_file, &tick) {
        tracing::error!(error = %e, "state file write failed");
    }
    Ok(inc)
}

async fn ack(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Incident> {
    transition(&st, &id, true).map(Json)
}

async fn resolve(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Incident> {
    transition(&st, &id, false).map(Json)
}

async fn tick(State(st): State<Shared>) -> ApiResult<TickSummary> {
    tokio::task::spawn_blocking(move || Json(st.run_tick())).await.map_err(internal)
}

// ---------------------------------------------------------------------------
// Ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadLine {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub kind: DbKind,
    pub accepted: usize,
    pub rejected: usize,
    /// The first bad lines (1-based line numbers in the body).
    pub errors: Vec<BadLine>,
    pub records: usize,
}

async fn ingest(State(st): State<Shared>, UrlPath(kind): UrlPath<String>, body: String) -> ApiResult<IngestResponse> {
    let kind: DbKind = kind
        .parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "unknown-kind", format!("no `{kind}` database")))?;
    let slot = st.slot(kind);
    let store = slot.store.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store-unavailable", slot.error.clone().unwrap_or_default())
    })?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut rejected = 0;
    for (i, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_record(line, Some(kind)) {
            Ok(r) => records.push(r),
            Err(e) => {
                rejected += 1;
                if errors.len() < MAX_REPORTED_BAD_LINES {
                    errors.push(BadLine { line: i + 1, error: e.to_string() });
                }
            }
        }
    }
    let accepted = store.append_all(records).map_err(internal)?;
    if accepted > 0 {
        slot.dirty.store(true, Ordering::Release);
    }
    Ok(Json(IngestResponse { kind, accepted, rejected, errors, records: store.record_count() }))
}

// ---------------------------------------------------------------------------
// Static assets

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        _ => "application/octet-stream",
    }
}

async fn static_files(State(st): State<Shared>, uri: Uri) -> Response {
    let path = uri.path();
    let Some(root) = &st.cfg.static_dir else {
        if path == "/" {
            return Json(json!({
                "name": env!("CARGO_PKG_NAME"),
                "version": env!("CARGO_PKG_VERSION"),
                "api": ["/api/health", "/api/chat", "/api/interfaces", "/api/incidents", "/api/tick", "/api/ingest/{kind}"],
            }))
            .into_response();
        }
        return ApiError::new(StatusCode::NOT_FOUND, "not-found", path).into_response();
    };
    let rel = PathBuf::from(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return ApiError::new(StatusCode::NOT_FOUND, "not-found", path).into_response();
    }
    let mut file = root.join(&rel);
    if path.ends_with('/') || file.is_dir() {
        file = file.join("index.html");
    }
    // Client-side routes fall back to the app shell.
    if !file.is_file() && !path.starts_with("/api/") {
        file = root.join("index.html");
    }
    match tokio::fs::read(&file).await {
        Ok(bytes) => {
            let mut resp = Response::new(Body::from(bytes));
            resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&file)));
            resp
        }
        Err(_) => ApiError::new(StatusCode::NOT_FOUND, "not-found", path).into_response(),
    }
}
