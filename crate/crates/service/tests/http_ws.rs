//! End-to-end checks against a bound server: REST status codes, the frame
//! stream, mutations over the socket, session isolation and frame dropping
//! for slow clients.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use arm_core::pipeline::{ExecMode, PipelineConfig, QueuePolicy, STAGES};
use arm_core::scope::demo::{tumor_detector, TUMOR_BROWN};
use arm_core::scope::{decode_rgb_png, ObjectiveName, VirtualSlide};
use arm_core::tensor::Tensor;
use arm_service::{router, AppState, ServiceConfig};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tower::ServiceExt;

const FOV: usize = 64;
const BASE_UM_PER_PX: f64 = 0.5;
const SLIDE_PX: usize = 256;

/// Distinct solid colors, one per slide; `brown` also carries a tumor square.
const SLIDES: [(&str, [f32; 3]); 4] = [
    ("brown", [0.85, 0.85, 0.85]),
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.1]),
    ("blue", [0.1, 0.1, 0.9]),
];

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let slides = dir.path().join("slides");
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    for (id, color) in SLIDES {
        let img = Tensor::from_fn(SLIDE_PX, SLIDE_PX, 3, |y, x, c| {
            let tumor = id == "brown" && (116..140).contains(&y) && (116..140).contains(&x);
            if tumor {
                TUMOR_BROWN[c]
            } else {
                color[c]
            }
        });
        VirtualSlide::new(id, img, BASE_UM_PER_PX, vec![]).unwrap().save(&slides).unwrap();
    }
    // Incompressible noise so frames are large enough to fill socket buffers.
    let mut s = 0x9e3779b97f4a7c15u64;
    let noise = Tensor::from_fn(1024, 1024, 3, |_, _, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 256) as f32 / 255.0
    });
    VirtualSlide::new("noise", noise, BASE_UM_PER_PX, vec![]).unwrap().save(&slides).unwrap();
    for name in [ObjectiveName::X10, ObjectiveName::X20] {
        tumor_detector(name).save(&models.join(format!("det_{}.json", name.tag()))).unwrap();
    }
    let mut config = ServiceConfig::new(slides, models);
    config.fov_px = FOV;
    let state = Arc::new(AppState::load(config).unwrap());
    Fixture { _dir: dir, state }
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn create(state: &Arc<AppState>, slide: &str) -> String {
    let (st, v) = call(state, "POST", "/v1/sessions", Some(json!({ "slide_id": slide }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn spawn_server(state: Arc<AppState>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    addr
}

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn connect(addr: SocketAddr, id: &str) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/v1/sessions/{id}/stream")).await.unwrap();
    ws
}

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(arm_service::message::SCHEMA_JSON).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

/// Next JSON message, validated against the published schema.
async fn next(ws: &mut Ws, schema: &jsonschema::Validator) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.expect("message in time");
        match msg.expect("stream open").unwrap() {
            Message::Text(t) => {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                let errs: Vec<String> = schema.iter_errors(&v).map(|e| e.to_string()).collect();
                assert!(errs.is_empty(), "schema violations {errs:?} in {}", &t.as_str()[..200.min(t.len())]);
                // The typed decoder must agree with the schema.
                serde_json::from_value::<arm_service::message::ServerMsg>(v.clone()).unwrap();
                return v;
            }
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected {other:?}"),
        }
    }
}

async fn next_of(ws: &mut Ws, schema: &jsonschema::Validator, kind: &str) -> Value {
    loop {
        let v = next(ws, schema).await;
        if v["type"] == kind {
            return v;
        }
        assert_ne!(v["type"], "error", "{v}");
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn frame_from(ws: &mut Ws, schema: &jsonschema::Validator, seq: u64) -> Value {
    loop {
        let f = next_of(ws, schema, "frame").await;
        if f["seq"].as_u64().unwrap() >= seq {
            return f;
        }
    }
}

#[tokio::test]
async fn rest_status_codes() {
    let fx = fixture();
    let st = &fx.state;

    let (code, slides) = call(st, "GET", "/v1/slides", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(slides.as_array().unwrap().len(), 5);

    let (code, _) = call(st, "POST", "/v1/sessions", Some(json!({ "slide_id": "nope" }))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(st, "POST", "/v1/sessions", Some(json!({ "slide_id": "red", "zoom": 2 }))).await;
    assert!(code.is_client_error());
    let (code, _) = call(st, "POST", "/v1/sessions", Some(json!({ "slide_id": "red", "fov_px": 63 }))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);

    let id = create(st, "red").await;
    let (code, info) = call(st, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(info["fov_px"], FOV);
    assert_eq!(info["objective"], "10X");

    let (code, _) = call(st, "POST", "/v1/sessions/missing/stage", Some(json!({ "x_um": 1.0, "y_um": 1.0 }))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let stage = format!("/v1/sessions/{id}/stage");
    let (code, _) = call(st, "POST", &stage, Some(json!({ "x_um": 1e6, "y_um": 10.0 }))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, ack) = call(st, "POST", &format!("{stage}?clamp=1"), Some(json!({ "x_um": 1e6, "y_um": 10.0 }))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(ack["clamped"], true);
    assert_eq!(ack["pose"]["x_um"].as_f64().unwrap(), SLIDE_PX as f64 * BASE_UM_PER_PX);

    let objective = format!("/v1/sessions/{id}/objective");
    let (code, ack) = call(st, "POST", &objective, Some(json!({ "name": "4X" }))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(ack["objective"], "4X");
    assert_eq!(ack["display_mode"], "off");
    assert_eq!(ack["notice"], "no-model");
    assert!(ack["model"].is_null());
    // Switching again without a model is no longer a conflict: the mode is already off.
    let (code, _) = call(st, "POST", &objective, Some(json!({ "name": "4X" }))).await;
    assert_eq!(code, StatusCode::OK);
    let (code, _) = call(st, "POST", &objective, Some(json!({ "name": "7X" }))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, ack) = call(st, "POST", &objective, Some(json!({ "name": "20X" }))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(ack["model"], "20X");
    assert!((ack["um_per_px"].as_f64().unwrap() - 0.225).abs() < 1e-12);

    let display = format!("/v1/sessions/{id}/display");
    let (code, ack) = call(st, "POST", &display, Some(json!({ "mode": "heatmap", "color_space": "green_only" }))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(ack, json!({ "mode": "heatmap", "color_space": "green_only" }));
    let (code, _) = call(st, "POST", &display, Some(json!({ "mode": "sepia" }))).await;
    assert!(code.is_client_error());

    let (code, stats) = call(st, "GET", &format!("/v1/sessions/{id}/stats"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(stats["frames_delivered"], 0);

    let (code, _) = call(st, "DELETE", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::NO_CONTENT);
    let (code, _) = call(st, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = call(st, "DELETE", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_mutations_are_idempotent() {
    let fx = fixture();
    let st = &fx.state;
    let id = create(st, "green").await;
    let body = json!({ "x_um": 40.0, "y_um": 50.0, "focus_z": 0.5 });
    let (c1, a1) = call(st, "POST", &format!("/v1/sessions/{id}/stage"), Some(body.clone())).await;
    let (c2, a2) = call(st, "POST", &format!("/v1/sessions/{id}/stage"), Some(body)).await;
    assert_eq!((c1, c2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a1, a2);
    let (_, o1) = call(st, "POST", &format!("/v1/sessions/{id}/objective"), Some(json!({ "name": "20X" }))).await;
    let (_, o2) = call(st, "POST", &format!("/v1/sessions/{id}/objective"), Some(json!({ "name": "20X" }))).await;
    assert_eq!(o1, o2);
    let (_, info) = call(st, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(info["pose"]["x_um"], 40.0);
    assert_eq!(info["objective"], "20X");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pans_over_the_socket_are_reflected_in_later_frames() {
    let fx = fixture();
    let addr = spawn_server(fx.state.clone()).await;
    let id = create(&fx.state, "brown").await;
    let schema = validator();
    let mut ws = connect(addr, &id).await;

    let first = next_of(&mut ws, &schema, "frame").await;
    assert_eq!(first["session_id"], id.as_str());
    assert_eq!(first["fov_px"], FOV);
    assert_eq!(first["model"], "10X");
    let keys: Vec<&str> = first["telemetry"]["stage_ms"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let mut names = STAGES.to_vec();
    names.sort();
    assert_eq!(keys, names);

    let span = SLIDE_PX as f64 * BASE_UM_PER_PX;
    let mut last_seq = first["seq"].as_u64().unwrap();
    for i in 0..50 {
        let (x, y) = (10.0 + (i as f64 * 7.3) % (span - 20.0), 10.0 + (i as f64 * 3.1) % (span - 20.0));
        send(&mut ws, json!({ "type": "stage", "x_um": x, "y_um": y })).await;
        let ack = next_of(&mut ws, &schema, "ack").await;
        assert_eq!(ack["request"], "stage");
        assert_eq!(ack["status"], 200);
        assert_eq!(ack["result"]["pose"]["x_um"], x);
        let from = ack["result"]["next_seq"].as_u64().unwrap();
        let f = frame_from(&mut ws, &schema, from).await;
        assert_eq!(f["stage"]["x_um"], x, "pan {i}");
        assert_eq!(f["stage"]["y_um"], y, "pan {i}");
        let seq = f["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
    }

    // Out of bounds over the socket answers with an error message, not a close.
    send(&mut ws, json!({ "type": "stage", "x_um": -5.0, "y_um": 1.0 })).await;
    let err = loop {
        let v = next(&mut ws, &schema).await;
        if v["type"] == "error" {
            break v;
        }
    };
    assert_eq!(err["status"], 422);
    send(&mut ws, json!({ "type": "zoom" })).await;
    let err = loop {
        let v = next(&mut ws, &schema).await;
        if v["type"] == "error" {
            break v;
        }
    };
    assert_eq!(err["status"], 400);
    ws.close(None).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn display_off_hides_overlay_but_keeps_telemetry() {
    let fx = fixture();
    let addr = spawn_server(fx.state.clone()).await;
    let id = create(&fx.state, "brown").await;
    let schema = validator();
    let mut ws = connect(addr, &id).await;

    let f = next_of(&mut ws, &schema, "frame").await;
    assert_eq!(f["overlay"]["mode"], "outline");
    assert!(!f["overlay"]["polygons"].as_array().unwrap().is_empty(), "tumor square is outlined");
    assert!(f["measurement"].is_object());

    send(&mut ws, json!({ "type": "display", "mode": "off" })).await;
    let ack = next_of(&mut ws, &schema, "ack").await;
    assert_eq!(ack["result"]["mode"], "off");
    let mut off_frames = 0;
    while off_frames < 8 {
        let f = next_of(&mut ws, &schema, "frame").await;
        if f["overlay"]["mode"] != "off" {
            assert_eq!(off_frames, 0, "mode never reverts");
            continue;
        }
        off_frames += 1;
        assert!(f["overlay"]["polygons"].as_array().unwrap().is_empty());
        assert!(f["overlay"]["texts"].as_array().unwrap().is_empty());
        assert_eq!(f["telemetry"]["stage_ms"].as_object().unwrap().len(), STAGES.len());
        assert!(f["telemetry"]["latency_ms"].as_f64().unwrap() > 0.0);
        assert!(f["focus"]["score"].as_f64().unwrap() > 0.0);
    }

    send(&mut ws, json!({ "type": "objective", "name": "4X" })).await;
    let ack = next_of(&mut ws, &schema, "ack").await;
    // Display was already off, so losing the model is not a conflict.
    assert_eq!(ack["status"], 200);
    let next_seq = ack["result"]["next_seq"].as_u64().unwrap();
    let f = frame_from(&mut ws, &schema, next_seq).await;
    assert_eq!(f["objective"], "4X");
    assert!(f["model"].is_null());
    assert!(f["notices"].as_array().unwrap().iter().any(|n| n == "no-model"));
    ws.close(None).await.unwrap();
}

fn center_color(frame: &Value) -> [f32; 3] {
    let png = base64::engine::general_purpose::STANDARD.decode(frame["fov_png_b64"].as_str().unwrap()).unwrap();
    let img = decode_rgb_png(&png).unwrap();
    assert_eq!(img.width(), frame["image_px"].as_u64().unwrap() as usize);
    let (cy, cx) = (img.height() / 2, img.width() / 2);
    [img.get(cy, cx, 0), img.get(cy, cx, 1), img.get(cy, cx, 2)]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_do_not_share_state() {
    let fx = fixture();
    let addr = spawn_server(fx.state.clone()).await;
    let mut clients = Vec::new();
    for (slide, color) in SLIDES.iter().skip(1) {
        let id = create(&fx.state, slide).await;
        let ws = connect(addr, &id).await;
        clients.push((id, *slide, *color, ws));
    }
    // A second stream on the same session is refused.
    let (id0, ..) = &clients[0];
    let mut dup = connect(addr, id0).await;
    match dup.next().await.unwrap().unwrap() {
        Message::Close(Some(frame)) => assert_eq!(frame.code, CloseCode::from(4409)),
        other => panic!("expected close, got {other:?}"),
    }
    let mut missing = connect(addr, "no-such-session").await;
    match missing.next().await.unwrap().unwrap() {
        Message::Close(Some(frame)) => assert_eq!(frame.code, CloseCode::from(4404)),
        other => panic!("expected close, got {other:?}"),
    }

    let schema = Arc::new(validator());
    let tasks = clients.into_iter().map(|(id, slide, color, mut ws)| {
        let schema = schema.clone();
        tokio::spawn(async move {
            for _ in 0..10 {
                let f = next_of(&mut ws, &schema, "frame").await;
                assert_eq!(f["session_id"], id.as_str());
                assert_eq!(f["slide_id"], slide);
                let c = center_color(&f);
                for k in 0..3 {
                    assert!((c[k] - color[k]).abs() < 0.08, "{slide}: center {c:?} vs {color:?}");
                }
            }
            ws.close(None).await.unwrap();
        })
    });
    for t in tasks.collect::<Vec<_>>() {
        t.await.unwrap();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_clients_skip_frames_and_see_the_count() {
    let fx = fixture();
    let addr = spawn_server(fx.state.clone()).await;
    let (code, v) = call(
        &fx.state,
        "POST",
        "/v1/sessions",
        Some(json!({
            "slide_id": "noise",
            "fov_px": 256,
            "config": PipelineConfig {
                mode: ExecMode::Pipelined,
                queue_policy: QueuePolicy::LatestWins,
                frame_interval_ms: Some(1000.0 / 30.0),
                ..PipelineConfig::default()
            },
        })),
    )
    .await;
    assert_eq!(code, StatusCode::OK, "{v}");
    let id = v["session_id"].as_str().unwrap().to_string();

    // A small receive window makes the server's writes stall while we sleep.
    let sock = tokio::net::TcpSocket::new_v4().unwrap();
    sock.set_recv_buffer_size(4096).unwrap();
    let stream = sock.connect(addr).await.unwrap();
    let url = format!("ws://{addr}/v1/sessions/{id}/stream");
    let (mut ws, _) = tokio_tungstenite::client_async(url, MaybeTlsStream::Plain(stream)).await.unwrap();
    let schema = validator();
    let first = next_of(&mut ws, &schema, "frame").await;
    tokio::time::sleep(Duration::from_millis(1500)).await;

    let mut prev = first["seq"].as_u64().unwrap();
    let mut gaps = 0;
    let mut last = first;
    for _ in 0..15 {
        let f = next_of(&mut ws, &schema, "frame").await;
        let seq = f["seq"].as_u64().unwrap();
        assert!(seq > prev, "frames stay in order");
        gaps += (seq - prev - 1) as usize;
        prev = seq;
        last = f;
    }
    assert!(gaps > 0, "a stalled client must skip frames");
    let dropped = last["telemetry"]["dropped"].as_u64().unwrap();
    assert!(dropped > 0);
    ws.close(None).await.unwrap();

    let (_, stats) = call(&fx.state, "GET", &format!("/v1/sessions/{id}/stats"), None).await;
    assert!(stats["frames_delivered"].as_u64().unwrap() > 15);
}
