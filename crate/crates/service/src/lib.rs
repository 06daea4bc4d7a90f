//! HTTP front end for severity scoring with per-user assessment history.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/score` | score an uploaded JPEG/PNG |
//! | POST | `/v1/users/{user_id}/assessments` | score and record |
//! | GET | `/v1/users/{user_id}/assessments` | history, oldest first |
//! | GET | `/v1/health` | 200 when the pipeline is loaded, 503 otherwise |

mod api;
mod config;
mod store;

use std::future::Future;
use std::sync::Arc;

pub use api::{
    error_code, pipeline_version, router, system_clock, ApiError, AppState, Clock, PatchResult, ScoreResponse, StateOptions,
};
pub use config::{ServiceConfig, DEFAULT_MAX_BODY_BYTES};
pub use store::{AssessmentRecord, AssessmentStore, FileStore, MemoryStore, StoreError};

/// Binds `cfg.listen_addr` and serves until `shutdown` resolves.
pub async fn serve(
    cfg: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> acne_core::Result<()> {
    let state = Arc::new(AppState::from_config(cfg)?);
    if let Some(reason) = state.unavailable_reason() {
        tracing::warn!("scoring unavailable: {reason}");
    }
    let listener = tokio::net::TcpListener::bind(cfg.listen_addr)
        .await
        .map_err(|e| acne_core::Error::Config(format!("cannot bind {}: {e}", cfg.listen_addr)))?;
    tracing::info!("listening on {}", cfg.listen_addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| acne_core::Error::Config(format!("server error: {e}")))
}
