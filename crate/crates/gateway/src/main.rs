use clap::Parser;
use netagent_gateway::{router, AppState, Overrides, ServiceConfig};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "netagent-gateway", version, about = "Network-monitoring agent gateway")]
struct Cli {
    /// Service config file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    listen: Option<String>,
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            eprintln!("netagent-gateway: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ServiceConfig::load(cli.config.as_deref(), &Overrides { listen: cli.listen })?;
    let st = tokio::task::spawn_blocking(move || AppState::build(cfg)).await??;
    let listener = tokio::net::TcpListener::bind(&st.cfg.listen).await?;
    // Printed on stdout so callers binding port 0 can find the address.
    println!("listening on {}", listener.local_addr()?);
    tracing::info!(addr = %listener.local_addr()?, "gateway started");

    let flush = tokio::spawn(flush_loop(st.clone()));
    let ticker = st.cfg.auto_tick.then(|| tokio::spawn(tick_loop(st.clone())));

    axum::serve(listener, router(st.clone())).with_graceful_shutdown(shutdown_signal()).await?;

    flush.abort();
    if let Some(t) = ticker {
        t.abort();
    }
    let n = tokio::task::spawn_blocking(move || st.flush_stores()).await?;
    tracing::info!(stores = n, "final flush done; exiting");
    Ok(())
}

async fn flush_loop(st: Arc<AppState>) {
    let mut every = tokio::time::interval(Duration::from_secs(st.cfg.flush_interval_s));
    loop {
        every.tick().await;
        let s = st.clone();
        let _ = tokio::task::spawn_blocking(move || {
            s.flush_stores();
            s.sessions.purge(netagent_gateway::app::now_s());
        })
        .await;
    }
}

async fn tick_loop(st: Arc<AppState>) {
    let mut every = tokio::time::interval(Duration::from_secs(st.cfg.tick_interval_s));
    every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    // The first tick of an interval fires immediately; wait a full period.
    every.tick().await;
    loop {
        every.tick().await;
        let s = st.clone();
        if let Err(e) = tokio::task::spawn_blocking(move || s.run_tick()).await {
            tracing::error!(error = %e, "tick task panicked");
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}
