//! Core of a multi-agent network-monitoring assistant.
//!
//! - [`telemetry`]: record kinds, line codec, counter-to-rate conversion.
//! - [`store`]: append-only per-database stores with windowed queries.
//! - [`detect`]: robust window statistics, anomaly detection, forecasting.
//! - [`llm`]: model backends, prompt assembly, tool-call codec.
//! - [`agent`]: scoped agents, coordinator, message bus, isolation checks.
//! - [`correlate`]: topology map, incident grouping, root-cause ranking.
//! - [`synth`]: seeded synthetic telemetry with injected faults.

pub mod agent;
pub mod correlate;
pub mod detect;
pub mod llm;
pub mod store;
pub mod synth;
pub mod telemetry;
