use std::sync::Arc;

use arm_core::overlay::{ColorSpace, DisplayMode};
use arm_core::pipeline::{PipelineConfig, PipelineStats};
use arm_core::scope::SlideMeta;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::message::{AckMsg, ClientMsg, ErrorMsg, Schema, ServerMsg};
use crate::session::{FrameRx, Session};
use crate::{ApiError, AppState, SessionInfo};

type AppResult<T> = Result<T, ApiError>;

pub const CLOSE_UNKNOWN_SESSION: u16 = 4404;
pub const CLOSE_STREAM_BUSY: u16 = 4409;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/slides", get(list_slides))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session).get(get_session))
        .route("/v1/sessions/{id}/stage", post(move_stage))
        .route("/v1/sessions/{id}/objective", post(set_objective))
        .route("/v1/sessions/{id}/display", post(set_display))
        .route("/v1/sessions/{id}/stats", get(stats))
        .route("/v1/sessions/{id}/stream", get(stream))
        .with_state(state)
}

async fn list_slides(State(app): State<Arc<AppState>>) -> AppResult<Json<Vec<SlideMeta>>> {
    Ok(Json(app.list_slides()?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    slide_id: String,
    #[serde(default)]
    fov_px: Option<usize>,
    #[serde(default)]
    config: Option<PipelineConfig>,
}

async fn create_session(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> AppResult<Json<SessionInfo>> {
    let s = app.create_session(&req.slide_id, req.fov_px, req.config)?;
    Ok(Json(s.info()))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<SessionInfo>> {
    Ok(Json(app.session(&id)?.info()))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<StatusCode> {
    let s = app.remove_session(&id)?;
    tokio::task::spawn_blocking(move || s.stop_stream())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageReq {
    x_um: f64,
    y_um: f64,
    #[serde(default)]
    focus_z: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ClampQuery {
    #[serde(default)]
    clamp: Option<String>,
}

fn truthy(v: Option<&str>) -> bool {
    matches!(v, Some("1" | "true" | "yes"))
}

async fn move_stage(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ClampQuery>,
    Json(req): Json<StageReq>,
) -> AppResult<Response> {
    let s = app.session(&id)?;
    let ack = s.move_stage(req.x_um, req.y_um, req.focus_z, truthy(q.clamp.as_deref()))?;
    Ok(Json(ack).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveReq {
    name: String,
}

async fn set_objective(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ObjectiveReq>,
) -> AppResult<Response> {
    let (status, ack) = app.session(&id)?.set_objective(&req.name)?;
    let status = StatusCode::from_u16(status).expect("valid status");
    Ok((status, Json(ack)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisplayReq {
    mode: DisplayMode,
    #[serde(default)]
    color_space: Option<ColorSpace>,
}

async fn set_display(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<DisplayReq>,
) -> AppResult<Response> {
    Ok(Json(app.session(&id)?.set_display(req.mode, req.color_space)).into_response())
}

async fn stats(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<PipelineStats>> {
    Ok(Json(app.session(&id)?.stats()))
}

async fn stream(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let session = app.session(&id);
    ws.on_upgrade(move |socket| async move {
        match session {
            Err(e) => close(socket, CLOSE_UNKNOWN_SESSION, &e.to_string()).await,
            Ok(s) => match s.start_stream() {
                Err(e) => close(socket, CLOSE_STREAM_BUSY, &e.to_string()).await,
                Ok(rx) => {
                    run_stream(socket, &s, rx).await;
                    let s2 = s.clone();
                    let _ = tokio::task::spawn_blocking(move || s2.stop_stream()).await;
                }
            },
        }
    })
}

async fn close(mut socket: WebSocket, code: u16, reason: &str) {
    let _ = socket
        .send(Message::Close(Some(CloseFrame {
            code,
            reason: reason.into(),
        })))
        .await;
}

fn encode(msg: &ServerMsg) -> Message {
    Message::Text(serde_json::to_string(msg).expect("messages serialize").into())
}

fn ack(request: &str, status: u16, result: impl serde::Serialize) -> ServerMsg {
    ServerMsg::Ack(AckMsg {
        schema: Schema::V1,
        request: request.into(),
        status,
        result: serde_json::to_value(result).expect("acks serialize"),
    })
}

fn error_msg(status: u16, detail: String) -> ServerMsg {
    ServerMsg::Error(ErrorMsg {
        schema: Schema::V1,
        status,
        detail,
    })
}

fn handle_client(s: &Session, text: &str) -> ServerMsg {
    let msg: ClientMsg = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return error_msg(400, format!("bad message: {e}")),
    };
    let result = match msg {
        ClientMsg::Stage {
            x_um,
            y_um,
            focus_z,
            clamp,
        } => s.move_stage(x_um, y_um, focus_z, clamp).map(|a| ack("stage", 200, a)),
        ClientMsg::Objective { name } => s.set_objective(&name).map(|(st, a)| ack("objective", st, a)),
        ClientMsg::Display { mode, color_space } => Ok(ack("display", 200, s.set_display(mode, color_space))),
    };
    result.unwrap_or_else(|e| error_msg(e.status().as_u16(), e.to_string()))
}

async fn run_stream(mut socket: WebSocket, s: &Session, mut rx: FrameRx) {
    let mut last_ordinal = 0u64;
    loop {
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    close(socket, 1000, "session closed").await;
                    return;
                }
                let Some(p) = rx.borrow_and_update().clone() else { continue };
                // Frames replaced before this client could take them.
                let skipped = p.ordinal.saturating_sub(last_ordinal + 1);
                let stream_dropped = if skipped > 0 { s.add_stream_drops(skipped) } else { s.stream_dropped() };
                last_ordinal = p.ordinal;
                let mut msg = p.msg.clone();
                msg.telemetry.dropped = p.pipeline_dropped + stream_dropped;
                if socket.send(encode(&ServerMsg::Frame(msg))).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                let reply = match incoming {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                    Some(Ok(Message::Text(t))) => handle_client(s, t.as_str()),
                    Some(Ok(Message::Binary(_))) => error_msg(400, "binary messages are not supported".into()),
                    Some(Ok(_)) => continue,
                };
                if socket.send(encode(&reply)).await.is_err() {
                    return;
                }
            }
        }
    }
}
