//! HTTP gateway for the dashboard platform.
//!
//! Every `/api` route answers with a JSON envelope; `/proxy` passes the
//! upstream body through with its own content type. Module fragments are
//! refreshed individually, either one at a time or through a long poll.

pub mod api;
pub mod auth;
pub mod config;
pub mod error;
pub mod fragments;

use std::sync::Arc;
use std::time::Duration;

use dashgate_core::Platform;
use tokio::sync::watch;
use tokio_util::sync::CancellationToken;

pub use api::router;
pub use config::{GatewayConfig, PollConfig, UiConfig};

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    /// Bumped after every state change so waiting polls re-check.
    pub changes: Arc<watch::Sender<u64>>,
    pub shutdown: CancellationToken,
    pub poll: PollConfig,
    pub ui: UiConfig,
}

impl AppState {
    pub fn new(platform: Arc<Platform>, poll: PollConfig, ui: UiConfig) -> Self {
        AppState {
            platform,
            changes: Arc::new(watch::channel(0).0),
            shutdown: CancellationToken::new(),
            poll,
            ui,
        }
    }

    pub fn notify_change(&self) {
        self.changes.send_modify(|v| *v = v.wrapping_add(1));
    }

    /// Times out unanswered calls once a second until shutdown.
    pub fn spawn_sweeper(&self) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(1));
            loop {
                tokio::select! {
                    _ = state.shutdown.cancelled() => break,
                    _ = tick.tick() => {}
                }
                match state.platform.telecom.expire_calls() {
                    Ok(expired) if !expired.is_empty() => state.notify_change(),
                    Ok(_) => {}
                    Err(e) => tracing::warn!(error = %e, "call sweep failed"),
                }
            }
        })
    }
}
