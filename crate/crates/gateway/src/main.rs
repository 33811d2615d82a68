use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use dashgate_core::store::FileStore;
use dashgate_core::{Platform, SystemClock};
use dashgate_gateway::{router, AppState, GatewayConfig};
use tracing_subscriber::EnvFilter;

/// Serves the dashboard API, the rewriting proxy and the static UI.
#[derive(Parser, Debug)]
#[command(name = "gateway", version)]
struct Cli {
    #[arg(long, env = "GATEWAY_PORT", default_value_t = 8080)]
    port: u16,
    /// Directory for the document store.
    #[arg(long, env = "GATEWAY_STORE", default_value = "gateway-data")]
    store: PathBuf,
    /// TOML config file. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();

    let config = match &cli.config {
        Some(path) => GatewayConfig::load(path)?,
        None => GatewayConfig::default(),
    };
    let store = FileStore::open(&cli.store)
        .with_context(|| format!("opening store at {}", cli.store.display()))?;
    let self_addresses = vec![
        format!("localhost:{}", cli.port),
        format!("127.0.0.1:{}", cli.port),
        format!("[::1]:{}", cli.port),
        format!("{}:{}", cli.bind, cli.port),
    ];
    let platform = Platform::open(
        Arc::new(store),
        Arc::new(SystemClock),
        config.platform,
        &self_addresses,
    )
    .context("starting platform")?;

    let state = AppState::new(Arc::new(platform), config.poll, config.ui);
    let sweeper = state.spawn_sweeper();
    let app = router(state.clone());

    let addr: SocketAddr = format!("{}:{}", cli.bind, cli.port)
        .parse()
        .with_context(|| format!("bad bind address {}", cli.bind))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "gateway listening");

    let shutdown = state.shutdown.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            wait_for_signal().await;
            tracing::info!("shutting down");
            // Open polls see this and answer with an empty list.
            shutdown.cancel();
        })
        .await?;
    sweeper.await.ok();
    Ok(())
}

async fn wait_for_signal() {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
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
        _ = ctrl_c => {}
        _ = term => {}
    }
}
