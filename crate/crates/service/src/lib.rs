//! HTTP and WebSocket front end for live microscope sessions.
//!
//! Each session owns a virtual stage, an objective and a pipeline. The
//! pipeline runs while a client holds the session's stream open and pushes
//! `arm-msg/1` frame messages; stage, objective and display changes arrive
//! either as POST requests or as messages on the same socket.

pub mod message;
mod routes;
mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

pub use routes::router;
pub use session::{AppState, DisplayAck, ObjectiveAck, ServiceConfig, Session, SessionInfo, StageAck, MAX_IMAGE_PX};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown slide {0}")]
    UnknownSlide(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSlide(_) | ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::load(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}
