//! HTTP/JSON service over the active-learning loop.
//!
//! Pools are registered once and any number of labeling sessions can be
//! opened against them. Each session is a serialized state machine: label
//! submissions for the same session are applied one at a time, sessions run
//! independently of each other.

mod api;
mod error;
mod store;

pub use api::{
    router, CreateSession, DisplayItem, ImageUrls, LabelEntry, LabelsRequest, LabelsResponse,
    Metrics, PoolCreated, PoolUpload, SessionCreated, StatusResponse,
};
pub use error::ApiError;
pub use store::{AppState, RegisteredPool, STORE_DIR_ENV};

use tokio::net::TcpListener;

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
