//! HTTP gateway for the network-monitoring agents: chat sessions,
//! interface summaries, incidents, ticks and record ingest.

pub mod app;
pub mod config;
pub mod session;

pub use app::{router, AppState, StartupError};
pub use config::{ConfigError, Overrides, ServiceConfig};
