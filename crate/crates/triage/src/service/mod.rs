//! HTTP service: survey intake, role-gated record access, scoring, training
//! jobs, analytics and safety tips.

pub mod api;
pub mod auth;
pub mod config;
pub mod jobs;
pub mod payload;
pub mod training;

use std::io::Write;

pub use api::{router, AppState};
pub use auth::{Endpoint, Role};
pub use config::ServiceConfig;

/// Binds, prints `listening on <addr>` to stdout and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let listen = config.listen;
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "listening on {addr}")?;
        out.flush()?;
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
