//! HTTP+JSON session service over the configuration engine.
//!
//! A session holds one model. Clients post updates, start runs and follow
//! an ordered event stream; an update that lands mid-run supersedes the
//! run, whose result is never published. Every session keeps an update
//! log from which [`Session::replay`] rebuilds it.

pub mod api;
pub mod session;

use std::net::SocketAddr;

pub use api::{router, AppState};
pub use session::{EngineEvent, EventBody, LogEntry, Session};

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
