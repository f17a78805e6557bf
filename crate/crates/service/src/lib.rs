//! HTTP experiment server for live adaptive sessions and surveys.
//!
//! State lives in an append-only event log; on startup the log is replayed
//! through the same code path that produced it, so every session resumes
//! with a bit-identical posterior.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod http;
pub mod service;
pub mod session;

use std::sync::Arc;
use std::time::Duration;

pub use config::{ExplanationVariant, ServiceConfig};
pub use error::{Result, ServiceError};
pub use http::router;
pub use service::{Clock, ManualClock, Service, SystemClock};
pub use session::SessionStatus;

/// Opens the service and serves HTTP until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let addr = format!("{}:{}", config.host, config.port);
    let sweep = Duration::from_secs(config.sweep_interval_secs.max(1));
    let service = tokio::task::spawn_blocking(move || Service::open(config, Arc::new(SystemClock)))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))??;
    let service = Arc::new(service);

    let sweeper = service.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep);
        loop {
            tick.tick().await;
            let s = sweeper.clone();
            match tokio::task::spawn_blocking(move || s.expire_idle()).await {
                Ok(Ok(n)) if n > 0 => tracing::info!(aborted = n, "expired idle sessions"),
                Ok(Err(e)) => tracing::error!(error = %e, "idle sweep failed"),
                _ => {}
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
