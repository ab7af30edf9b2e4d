//! HTTP/1.1 API under `/api/v1` and a server-sent-event live channel.
//!
//! Bearer tokens resolve to users in the store; each route checks the role
//! table in [`Endpoint::allowed`].

mod auth;
mod error;
mod handlers;
mod sse;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use dalton_core::bus::bridge::HealthFlag;
use dalton_core::hhi::CalibrationTable;
use dalton_core::pipeline::Pipeline;
use dalton_core::store::Store;

pub use auth::{Endpoint, Session};
pub use error::ApiError;

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(15);

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Arc<Store>,
    pub calibration: Arc<CalibrationTable>,
    pub health: HealthFlag,
    pub heartbeat: Duration,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, calibration: CalibrationTable) -> Self {
        AppState {
            store: pipeline.store().clone(),
            pipeline,
            calibration: Arc::new(calibration),
            health: HealthFlag::default(),
            heartbeat: DEFAULT_HEARTBEAT,
        }
    }

    pub fn with_heartbeat(mut self, every: Duration) -> Self {
        self.heartbeat = every;
        self
    }

    pub fn with_health(mut self, health: HealthFlag) -> Self {
        self.health = health;
        self
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/annotations", post(handlers::post_annotation))
        .route("/devices", get(handlers::list_devices))
        .route("/devices/{id}/command", post(handlers::exec_command))
        .route("/devices/{id}/series", get(handlers::get_series))
        .route("/commands/{id}", get(handlers::get_command))
        .route("/sites/{id}/hhi", get(handlers::get_hhi))
        .route("/errors", get(handlers::get_errors))
        .route("/stream", get(sse::stream))
        .route("/health", get(handlers::health));
    Router::new().nest("/api/v1", api).with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
