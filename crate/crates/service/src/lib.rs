//! HTTP service over the caption pipeline: job submission, clip lookup,
//! annotation tasks and labels, corpus statistics and threshold calibration.
//!
//! | method | path | auth |
//! |--------|------|------|
//! | GET  | `/bootstrap` | none |
//! | POST | `/jobs` | admin |
//! | GET  | `/jobs/{id}`, `/clips/{id}`, `/stats`, `/calibration/report` | any token |
//! | GET  | `/annotation/tasks?annotator=` | that annotator or admin |
//! | POST | `/annotation/tasks` (import) | admin |
//! | POST | `/annotation/labels` | the labelling annotator |
//! | POST | `/calibration/run` | admin |
//!
//! Tokens are sent as `Authorization: Bearer <token>`. Errors are JSON
//! `{"error": {"code", "message", "field"?}}`.

pub mod annotation;
pub mod auth;
pub mod calibration;
pub mod config;
pub mod error;
pub mod jobs;
pub mod mock_backend;
pub mod persist;
pub mod routes;
pub mod state;

use std::future::Future;

pub use annotation::{AnnotationTask, FlaggedPhrase, LabelPayload, StoredLabel, TaskImport, TaskStatus};
pub use config::{AnnotatorConfig, ServiceConfig};
pub use error::{ApiError, ServiceError};
pub use jobs::{BackendFactory, ClipView, JobRecord, JobRequest, JobStatus, JobView};
pub use routes::router;
pub use state::AppState;

/// Serves the API on `listener` until `shutdown` resolves. Jobs left
/// unfinished by a previous process are resumed first.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    state.resume_pending();
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
