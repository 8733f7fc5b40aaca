use clap::{Parser, Subcommand};
use netagent_core::detect::DetectorConfig;
use netagent_core::synth::{read_manifest, score_detection, SynthConfig, DEFAULT_START_TS};
use netagent_replay::{
    format_report, format_score, ingest, open_stores, parse_scenarios, replay, report, synth, CliError,
    ReplayOptions,
};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Debug, Parser)]
#[command(name = "netagent-replay", version, about = "Synthetic telemetry, ingest, replay and detection reports")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with injected faults.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        interfaces: usize,
        #[arg(long, default_value_t = 3)]
        days: u32,
        #[arg(long, default_value_t = 60)]
        cadence: i64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_START_TS)]
        start: i64,
        /// Number of default faults to inject, cycling through all kinds.
        #[arg(long, default_value_t = 0)]
        faults: usize,
        /// Explicit fault, `kind:target:onset_ts:duration_s:magnitude`. Repeatable.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
    },
    /// Append telemetry files to the stores in a directory.
    Ingest {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Stream telemetry files into a running gateway.
    Replay {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        gateway: String,
        /// Telemetry seconds per wall-clock second; 0 sends everything at once.
        #[arg(long, default_value_t = 3600.0)]
        speedup: f64,
        #[arg(long, default_value_t = 100)]
        batch_ms: u64,
        #[arg(long, env = "NETAGENT_AUTH_TOKEN")]
        token: Option<String>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run the detector over a time range and print the events.
    Report {
        #[arg(long)]
        store_dir: PathBuf,
        /// Range start (epoch seconds); defaults to the newest complete window.
        #[arg(long)]
        from: Option<i64>,
        #[arg(long)]
        to: Option<i64>,
        /// Score the events against a synth manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        window_s: Option<i64>,
        #[arg(long)]
        z_warn: Option<f64>,
        #[arg(long)]
        z_critical: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("netagent-replay: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, CliError> {
    match cmd {
        Cmd::Synth { out, interfaces, days, cadence, seed, start, faults, scenarios } => {
            let cfg = SynthConfig {
                n_interfaces: interfaces,
                days,
                cadence_s: cadence,
                start_ts: start,
                seed,
                scenarios: parse_scenarios(&scenarios)?,
                ..SynthConfig::default()
            };
            let m = synth(cfg, faults, &out)?;
            for (file, n) in &m.counts {
                println!("{file}: {n} records");
            }
            println!("scenarios: {}", m.scenarios.len());
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Ingest { store_dir, files } => {
            let counts = ingest(&files, &store_dir)?;
            for (kind, n) in &counts.per_kind {
                println!("{kind}: {n}");
            }
            for b in &counts.bad {
                eprintln!("bad line {b}");
            }
            println!("bad lines: {}", counts.bad.len());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { gateway, speedup, batch_ms, token, files } => {
            let opts = ReplayOptions { gateway, speedup, batch: Duration::from_millis(batch_ms), token };
            let stats = replay(&files, &opts)?;
            for (kind, n) in &stats.sent {
                println!("{kind}: {n}");
            }
            for b in &stats.bad {
                eprintln!("bad line {b}");
            }
            println!(
                "posts: {} rejected: {} bad lines: {} elapsed: {:.1}s",
                stats.posts,
                stats.rejected,
                stats.bad.len(),
                stats.elapsed.as_secs_f64()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { store_dir, from, to, manifest, window_s, z_warn, z_critical } => {
            let mut cfg = DetectorConfig::default();
            if let Some(w) = window_s {
                cfg.window_s = w;
            }
            if let Some(z) = z_warn {
                cfg.z_warn = z;
            }
            if let Some(z) = z_critical {
                cfg.z_critical = z;
            }
            cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
            let stores = open_stores(&store_dir)?;
            let sweep = report(&stores, &cfg, from, to)?;
            print!("{}", format_report(&sweep));
            if let Some(p) = manifest {
                let m = read_manifest(&p).map_err(|source| CliError::Io { path: p.clone(), source })?;
                print!("{}", format_score(&score_detection(&m.scenarios, &sweep)));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
