//! Service configuration: one TOML file, overridden by `NETAGENT_*`
//! environment variables, overridden by command-line flags.
//!
//! Relative paths in the file resolve against the file's directory.

use netagent_core::detect::DetectorConfig;
use netagent_core::llm::{BackendConfig, BackendKind};
use netagent_core::telemetry::DbKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MIN_TICK_INTERVAL_S: u64 = 60;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorePaths {
    pub interface: PathBuf,
    pub flow: PathBuf,
    pub optical: PathBuf,
}

impl StorePaths {
    pub fn get(&self, kind: DbKind) -> &Path {
        match kind {
            DbKind::Interface => &self.interface,
            DbKind::Flow => &self.flow,
            DbKind::Optical => &self.optical,
        }
    }
}

impl Default for StorePaths {
    fn default() -> Self {
        Self {
            interface: "data/interface.nwts".into(),
            flow: "data/flow.nwts".into(),
            optical: "data/optical.nwts".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub stores: StorePaths,
    /// Detector settings keyed by kind (`interface`, `flow`, `optical`).
    pub detector: BTreeMap<String, DetectorConfig>,
    pub backend: BackendConfig,
    pub topology: Option<PathBuf>,
    pub tick_interval_s: u64,
    /// Whether the periodic tick loop runs; manual ticks always work.
    pub auto_tick: bool,
    pub session_idle_expiry_s: u64,
    pub session_log: PathBuf,
    pub audit_log: Option<PathBuf>,
    /// Incident book and tick events, rewritten after every tick.
    pub state_file: PathBuf,
    /// Seconds between flushes of appended records to the store files.
    pub flush_interval_s: u64,
    pub step_budget: usize,
    pub gap_s: i64,
    pub static_dir: Option<PathBuf>,
    /// When set, every `/api` route except health requires
    /// `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            stores: StorePaths::default(),
            detector: BTreeMap::new(),
            backend: BackendConfig::scripted("scripts/default.script"),
            topology: None,
            tick_interval_s: 3600,
            auto_tick: true,
            session_idle_expiry_s: 24 * 3600,
            session_log: "data/sessions.jsonl".into(),
            audit_log: Some("data/audit.jsonl".into()),
            state_file: "data/state.json".into(),
            flush_interval_s: 5,
            step_budget: netagent_core::agent::DEFAULT_STEP_BUDGET,
            gap_s: netagent_core::correlate::DEFAULT_GAP_S,
            static_dir: None,
            auth_token: None,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub listen: Option<String>,
}

type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

impl ServiceConfig {
    pub fn detector_for(&self, kind: DbKind) -> DetectorConfig {
        self.detector.get(kind.as_str()).cloned().unwrap_or_default()
    }

    /// Reads `path` (defaults when `None`), then applies the environment
    /// and `flags`.
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self, ConfigError> {
        Self::load_with(path, flags, &|k| std::env::var(k).ok())
    }

    pub fn load_with(path: Option<&Path>, flags: &Overrides, env: EnvLookup<'_>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                let mut cfg: ServiceConfig =
                    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: p.into(), message: e.to_string() })?;
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.resolve_paths(base);
                cfg
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(env)?;
        if let Some(l) = &flags.listen {
            cfg.listen = l.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.stores.interface);
        fix(&mut self.stores.flow);
        fix(&mut self.stores.optical);
        fix(&mut self.session_log);
        fix(&mut self.state_file);
        for p in [&mut self.topology, &mut self.audit_log, &mut self.static_dir, &mut self.backend.script_path]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn apply_env(&mut self, env: EnvLookup<'_>) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(var: &'static str, v: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env { var, message: e.to_string() })
        }
        if let Some(v) = env("NETAGENT_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = env("NETAGENT_INTERFACE_STORE") {
            self.stores.interface = v.into();
        }
        if let Some(v) = env("NETAGENT_FLOW_STORE") {
            self.stores.flow = v.into();
        }
        if let Some(v) = env("NETAGENT_OPTICAL_STORE") {
            self.stores.optical = v.into();
        }
        if let Some(v) = env("NETAGENT_TOPOLOGY") {
            self.topology = Some(v.into());
        }
        if let Some(v) = env("NETAGENT_TICK_INTERVAL_S") {
            self.tick_interval_s = num("NETAGENT_TICK_INTERVAL_S", v)?;
        }
        if let Some(v) = env("NETAGENT_AUTO_TICK") {
            self.auto_tick = num("NETAGENT_AUTO_TICK", v)?;
        }
        if let Some(v) = env("NETAGENT_SESSION_LOG") {
            self.session_log = v.into();
        }
        if let Some(v) = env("NETAGENT_AUDIT_LOG") {
            self.audit_log = Some(v.into());
        }
        if let Some(v) = env("NETAGENT_STATE_FILE") {
            self.state_file = v.into();
        }
        if let Some(v) = env("NETAGENT_STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        if let Some(v) = env("NETAGENT_AUTH_TOKEN") {
            self.auth_token = Some(v).filter(|s| !s.is_empty());
        }
        if let Some(v) = env("NETAGENT_BACKEND") {
            self.backend.kind = match v.as_str() {
                "http" => BackendKind::Http,
                "scripted" => BackendKind::Scripted,
                other => {
                    return Err(ConfigError::Env { var: "NETAGENT_BACKEND", message: format!("unknown kind `{other}`") })
                }
            };
        }
        if let Some(v) = env("NETAGENT_BACKEND_URL") {
            self.backend.endpoint_url = Some(v);
        }
        if let Some(v) = env("NETAGENT_MODEL") {
            self.backend.model_name = v;
        }
        if let Some(v) = env("NETAGENT_SCRIPT") {
            self.backend.script_path = Some(v.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tick_interval_s < MIN_TICK_INTERVAL_S {
            return Err(ConfigError::Invalid(format!("tick_interval_s must be at least {MIN_TICK_INTERVAL_S}")));
        }
        if self.flush_interval_s == 0 {
            return Err(ConfigError::Invalid("flush_interval_s must be positive".into()));
        }
        if let Some(t) = &self.topology {
            if !t.exists() {
                return Err(ConfigError::Invalid(format!("topology file {} does not exist", t.display())));
            }
        }
        for k in self.detector.keys() {
            if k.parse::<DbKind>().is_err() {
                return Err(ConfigError::Invalid(format!("detector section for unknown kind `{k}`")));
            }
        }
        for (k, d) in &self.detector {
            d.validate().map_err(|e| ConfigError::Invalid(format!("detector.{k}: {e}")))?;
        }
        // Ticks evaluate one window across all agents.
        let windows: std::collections::BTreeSet<i64> =
            DbKind::ALL.iter().map(|k| self.detector_for(*k).window_s).collect();
        if windows.len() > 1 {
            return Err(ConfigError::Invalid(format!("detector window_s differs between kinds: {windows:?}")));
        }
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
