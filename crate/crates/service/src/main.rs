use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use deanchor_core::config::{ExperimentKind, RunConfig};
use deanchor_core::pipeline;
use deanchor_core::session::SystemClock;
use deanchor_service::{serve, AppState};

/// Serve live de-anchoring sessions over HTTP.
#[derive(Debug, Parser)]
#[command(name = "deanchor-serve", version)]
struct Args {
    /// Run configuration document; defaults to the built-in second-experiment study.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed when no configuration file is given.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory for the event log and snapshots.
    #[arg(long, default_value = "deanchor-state")]
    state_dir: PathBuf,
    /// Directory of static files (the trial UI bundle).
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let mut c = RunConfig::new(args.seed);
            c.experiment.kind = ExperimentKind::Experiment2;
            c
        }
    };
    let study = pipeline::live_study(&config).context("building the study")?;
    let app = AppState::open(study, &config, &args.state_dir, Arc::new(SystemClock)).context("opening state")?;
    tracing::info!("{} sessions restored from {}", app.session_count(), args.state_dir.display());
    serve(app, SocketAddr::new(args.host, args.port), args.static_dir).await?;
    Ok(())
}
