//! HTTP front for [`MockBackend`], speaking the backend wire protocol.
//!
//! Each role is mounted under its own prefix, so a pipeline config points
//! role `r` at `http://host:port/r`:
//!
//! ```text
//! GET  /{role}/v1/meta
//! POST /{role}/v1/{separate|classify|generate|embed}
//! ```

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use capfuse_core::backends::{MockBackend, Op, Role, Transport, TransportError, WireRequest};

use crate::error::{parse_body, ApiError};

pub fn router(mock: Arc<MockBackend>) -> Router {
    Router::new()
        .route("/{role}/v1/meta", get(meta))
        .route("/{role}/v1/{op}", post(call))
        .with_state(mock)
}

/// Serves [`router`] on `listener` until `shutdown` resolves.
pub async fn serve(
    mock: Arc<MockBackend>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(mock)).with_graceful_shutdown(shutdown).await
}

fn role(name: &str) -> Result<Role, ApiError> {
    name.parse().map_err(|e: String| ApiError::not_found(e))
}

async fn meta(State(mock): State<Arc<MockBackend>>, Path(name): Path<String>) -> Result<Response, ApiError> {
    let role = role(&name)?;
    let meta = mock.meta(role).map_err(transport_error)?;
    Ok(Json(meta).into_response())
}

async fn call(
    State(mock): State<Arc<MockBackend>>,
    Path((name, op)): Path<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let role = role(&name)?;
    let op = Op::from_path(&op).ok_or_else(|| ApiError::not_found(format!("unknown operation `{op}`")))?;
    let req: WireRequest = parse_body(&body)?;
    if req.role != role {
        return Err(ApiError::invalid("role", format!("request role {} sent to /{role}", req.role)));
    }
    let resp = tokio::task::spawn_blocking(move || mock.send(op, &req, Duration::from_secs(60)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(transport_error)?;
    Ok(Json(resp).into_response())
}

fn transport_error(e: TransportError) -> ApiError {
    match e {
        TransportError::Status { code, body } => ApiError::new(
            StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            "backend",
            body,
        ),
        TransportError::Timeout => ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "backend timed out"),
        other => ApiError::new(StatusCode::BAD_GATEWAY, "backend", other.to_string()),
    }
}
