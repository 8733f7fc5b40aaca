//! Fixtures shared by the gateway test targets.
#![allow(dead_code)]

use netagent_core::synth::Dataset;
use netagent_core::telemetry::DbKind;
use netagent_gateway::{router, AppState, Overrides, ServiceConfig};
use serde_json::Value;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

pub const SCRIPT: &str = include_str!("../../../../scripts/default.script");

/// Writes stores, topology, script and a config into `dir`; returns the
/// config path. `extra` is appended to the top-level TOML keys.
pub fn write_fixture(dir: &Path, ds: &Dataset, extra: &str) -> PathBuf {
    for store in ds.stores() {
        store.persist(&dir.join(format!("{}.nwts", store.kind().as_str()))).unwrap();
    }
    std::fs::write(dir.join("topology.txt"), ds.topology.to_text()).unwrap();
    write_config(dir, SCRIPT, extra)
}

pub fn write_config(dir: &Path, script: &str, extra: &str) -> PathBuf {
    std::fs::write(dir.join("test.script"), script).unwrap();
    let topo = if dir.join("topology.txt").exists() { "topology = \"topology.txt\"\n" } else { "" };
    let cfg = format!(
        "listen = \"127.0.0.1:0\"\nauto_tick = false\n{topo}session_log = \"sessions.jsonl\"\n\
         audit_log = \"audit.jsonl\"\nstate_file = \"state.json\"\n{extra}\n\
         [stores]\ninterface = \"interface.nwts\"\nflow = \"flow.nwts\"\noptical = \"optical.nwts\"\n\
         [backend]\nkind = \"scripted\"\nscript_path = \"test.script\"\n"
    );
    let path = dir.join("netagent.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

pub fn store_file(dir: &Path, kind: DbKind) -> PathBuf {
    dir.join(format!("{}.nwts", kind.as_str()))
}

pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into()
}

fn read(mut resp: ureq::http::Response<ureq::Body>) -> (u16, Value) {
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

pub fn get(base: &str, path: &str) -> (u16, Value) {
    read(client().get(format!("{base}{path}")).call().unwrap())
}

pub fn post(base: &str, path: &str, body: &Value) -> (u16, Value) {
    read(client().post(format!("{base}{path}")).send_json(body).unwrap())
}

pub fn post_text(base: &str, path: &str, body: String) -> (u16, Value) {
    read(client().post(format!("{base}{path}")).header("Content-Type", "text/plain").send(body).unwrap())
}

pub fn post_empty(base: &str, path: &str) -> (u16, Value) {
    read(client().post(format!("{base}{path}")).send_empty().unwrap())
}

/// The gateway binary running as a child process.
pub struct GatewayProcess {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    pub base: String,
}

impl GatewayProcess {
    pub fn start(config: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_netagent-gateway"))
            .arg("--config")
            .arg(config)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn gateway");
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        out.read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line:?}"));
        Self { base: format!("http://{addr}"), child, _stdout: out }
    }

    /// Hard kill, as in a crash.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for GatewayProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// The gateway router served from a background runtime in this process.
pub struct InProcess {
    pub base: String,
    pub state: Arc<AppState>,
    rt: tokio::runtime::Runtime,
}

impl InProcess {
    pub fn start(config: &Path) -> Self {
        let cfg = ServiceConfig::load_with(Some(config), &Overrides::default(), &|_| None).unwrap();
        Self::with_config(cfg)
    }

    pub fn with_config(cfg: ServiceConfig) -> Self {
        let state = AppState::build(cfg).unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = router(state.clone());
        rt.spawn(async move { axum::serve(listener, app).await });
        Self { base, state, rt }
    }
}
