use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use arm_core::overlay::{ColorSpace, DisplayMode, OverlayStyle};
use arm_core::pipeline::{
    run_pipeline, Controls, ExecMode, FrameOutput, PipelineConfig, PipelineStats, QueuePolicy, StatsCollector, STAGES,
};
use arm_core::scope::{
    downscale, encode_rgb_png, list_slides, ModelRegistry, ObjectiveName, ScopeError, ScopeSession, SlideMeta,
    StagePose, VirtualSlide,
};
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::message::{FocusMsg, FrameMsg, OverlayMsg, Schema, StageMsg, Telemetry};
use crate::ApiError;

/// Largest image side sent to viewers.
pub const MAX_IMAGE_PX: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub slides_dir: PathBuf,
    pub models_dir: PathBuf,
    pub fov_px: usize,
    /// Used for sessions created without a `config`.
    pub pipeline: PipelineConfig,
}

impl ServiceConfig {
    /// Live-viewing defaults: pipelined FCN, newest frame wins, 30 fps camera.
    pub fn new(slides_dir: PathBuf, models_dir: PathBuf) -> Self {
        Self {
            slides_dir,
            models_dir,
            fov_px: 512,
            pipeline: PipelineConfig {
                mode: ExecMode::Pipelined,
                queue_policy: QueuePolicy::LatestWins,
                frame_interval_ms: Some(1000.0 / 30.0),
                ..PipelineConfig::default()
            },
        }
    }
}

/// A frame ready for the wire, minus the stream-specific drop count.
#[derive(Debug)]
pub struct Payload {
    /// Position in this run's display order, starting at 1.
    pub ordinal: u64,
    pub pipeline_dropped: u64,
    pub msg: FrameMsg,
}

pub type FrameRx = watch::Receiver<Option<Arc<Payload>>>;

struct Run {
    controls: Arc<Controls>,
    thread: Option<JoinHandle<()>>,
}

pub struct Session {
    pub id: String,
    pub slide_id: String,
    scope: Arc<Mutex<ScopeSession>>,
    config: PipelineConfig,
    style: Mutex<OverlayStyle>,
    stats: Mutex<StatsCollector>,
    run_dropped: AtomicU64,
    stream_dropped: AtomicU64,
    run: Mutex<Option<Run>>,
    closed: AtomicBool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageAck {
    pub pose: StagePose,
    pub clamped: bool,
    /// First frame sequence number captured at this pose.
    pub next_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveAck {
    pub objective: ObjectiveName,
    pub um_per_px: f64,
    pub model: Option<String>,
    pub notice: Option<String>,
    pub display_mode: DisplayMode,
    pub next_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisplayAck {
    pub mode: DisplayMode,
    pub color_space: ColorSpace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub slide_id: String,
    pub fov_px: usize,
    pub objective: ObjectiveName,
    pub um_per_px: f64,
    pub pose: StagePose,
    pub config: PipelineConfig,
}

impl Session {
    fn new(id: String, scope: ScopeSession, config: PipelineConfig) -> Self {
        Self {
            id,
            slide_id: scope.slide().id().to_string(),
            scope: Arc::new(Mutex::new(scope)),
            config,
            style: Mutex::new(OverlayStyle::default()),
            stats: Mutex::new(StatsCollector::default()),
            run_dropped: AtomicU64::new(0),
            stream_dropped: AtomicU64::new(0),
            run: Mutex::new(None),
            closed: AtomicBool::new(false),
        }
    }

    pub fn info(&self) -> SessionInfo {
        let scope = self.scope.lock().expect("scope lock");
        SessionInfo {
            session_id: self.id.clone(),
            slide_id: self.slide_id.clone(),
            fov_px: scope.fov_px(),
            objective: scope.objective().name,
            um_per_px: scope.objective().um_per_px,
            pose: scope.pose(),
            config: self.config.clone(),
        }
    }

    pub fn move_stage(&self, x_um: f64, y_um: f64, focus_z: Option<f64>, clamp: bool) -> Result<StageAck, ApiError> {
        let mut scope = self.scope.lock().expect("scope lock");
        let requested = StagePose {
            x_um,
            y_um,
            focus_z: focus_z.unwrap_or(scope.pose().focus_z),
        };
        let pose = scope.set_pose(requested, clamp).map_err(|e| match e {
            ScopeError::OutOfBounds { .. } => ApiError::Unprocessable(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        })?;
        Ok(StageAck {
            pose,
            clamped: pose != requested,
            next_seq: scope.next_seq(),
        })
    }

    /// Returns 409 when the objective has no model while an overlay was on;
    /// the overlay is switched off either way when no model exists.
    pub fn set_objective(&self, name: &str) -> Result<(u16, ObjectiveAck), ApiError> {
        let name: ObjectiveName = name.parse().map_err(|_| ApiError::Unprocessable(format!("unknown objective {name:?}")))?;
        let mut scope = self.scope.lock().expect("scope lock");
        let change = scope.set_objective(name);
        let mut style = self.style.lock().expect("style lock");
        let conflict = change.model.is_none() && style.mode != DisplayMode::Off;
        if change.model.is_none() {
            style.mode = DisplayMode::Off;
            self.push_style(&style);
        }
        let ack = ObjectiveAck {
            objective: change.objective.name,
            um_per_px: change.objective.um_per_px,
            model: change.model.as_ref().map(|m| m.objective_tag().to_string()),
            notice: change.notice.map(str::to_string),
            display_mode: style.mode,
            next_seq: scope.next_seq(),
        };
        Ok((if conflict { 409 } else { 200 }, ack))
    }

    pub fn set_display(&self, mode: DisplayMode, color_space: Option<ColorSpace>) -> DisplayAck {
        let mut style = self.style.lock().expect("style lock");
        style.mode = mode;
        if let Some(cs) = color_space {
            style.color_space = cs;
        }
        self.push_style(&style);
        DisplayAck {
            mode: style.mode,
            color_space: style.color_space,
        }
    }

    fn push_style(&self, style: &OverlayStyle) {
        if let Some(run) = self.run.lock().expect("run lock").as_ref() {
            let s = style.clone();
            run.controls.update_style(move |cur| *cur = s);
        }
    }

    pub fn stats(&self) -> PipelineStats {
        let dropped = self.run_dropped.load(Ordering::Relaxed) + self.stream_dropped.load(Ordering::Relaxed);
        self.stats.lock().expect("stats lock").snapshot(dropped, false)
    }

    pub fn add_stream_drops(&self, n: u64) -> u64 {
        self.stream_dropped.fetch_add(n, Ordering::Relaxed) + n
    }

    pub fn stream_dropped(&self) -> u64 {
        self.stream_dropped.load(Ordering::Relaxed)
    }

    /// Starts this session's pipeline. Only one stream may be live.
    pub fn start_stream(self: &Arc<Self>) -> Result<FrameRx, ApiError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(ApiError::UnknownSession(self.id.clone()));
        }
        // Lock order elsewhere is style before run.
        let style = self.style.lock().expect("style lock");
        let mut run = self.run.lock().expect("run lock");
        if run.is_some() {
            return Err(ApiError::Conflict("stream already active".into()));
        }
        *self.stats.lock().expect("stats lock") = StatsCollector::default();
        self.run_dropped.store(0, Ordering::Relaxed);
        self.stream_dropped.store(0, Ordering::Relaxed);

        let controls = Arc::new(Controls::new(style.clone()));
        drop(style);
        let (tx, rx) = watch::channel(None);
        let s = self.clone();
        let c = controls.clone();
        let thread = std::thread::spawn(move || {
            let mut ordinal = 0u64;
            let result = run_pipeline(&s.config, &s.scope, None, &c, |out| {
                ordinal += 1;
                s.run_dropped.store(out.dropped_so_far, Ordering::Relaxed);
                let fps = {
                    let mut st = s.stats.lock().expect("stats lock");
                    st.push(&out.timings);
                    st.fps()
                };
                match s.payload(out, ordinal, fps) {
                    Ok(p) => {
                        tx.send_replace(Some(Arc::new(p)));
                        true
                    }
                    Err(_) => false,
                }
            });
            if let Ok(stats) = result {
                s.run_dropped.store(stats.frames_dropped, Ordering::Relaxed);
            }
        });
        *run = Some(Run {
            controls,
            thread: Some(thread),
        });
        Ok(rx)
    }

    /// Cancels the pipeline and waits for it. Blocking.
    pub fn stop_stream(&self) {
        let run = self.run.lock().expect("run lock").take();
        if let Some(mut run) = run {
            run.controls.cancel();
            if let Some(t) = run.thread.take() {
                let _ = t.join();
            }
        }
    }

    fn payload(&self, out: FrameOutput, ordinal: u64, fps: f64) -> Result<Payload, ScopeError> {
        let rgb = out.frame.rgb.as_ref().expect("display frames are debayered");
        let fov_px = rgb.width();
        let factor = fov_px.div_ceil(MAX_IMAGE_PX).max(1);
        let img = downscale(rgb, factor);
        let png = encode_rgb_png(&img)?;
        let stage_ms: BTreeMap<String, f64> =
            STAGES.iter().zip(out.timings.stage_ms()).map(|(k, v)| (k.to_string(), v)).collect();
        let msg = FrameMsg {
            schema: Schema::V1,
            session_id: self.id.clone(),
            slide_id: out.frame.slide_id.clone(),
            seq: out.frame.seq,
            fov_px,
            image_px: img.width(),
            fov_png_b64: base64::engine::general_purpose::STANDARD.encode(png),
            overlay: OverlayMsg {
                mode: out.overlay.mode,
                color_space: out.overlay.color_space,
                polygons: out.overlay.polygons,
                texts: out.overlay.texts,
            },
            telemetry: Telemetry {
                stage_ms,
                latency_ms: out.timings.latency_ms,
                fps,
                dropped: 0,
            },
            focus: FocusMsg {
                score: out.frame.focus_score.unwrap_or(0.0),
                gated: !out.gate.overlay_allowed,
            },
            objective: out.frame.objective.name,
            um_per_px: out.frame.objective.um_per_px,
            model: out.frame.model.as_ref().map(|m| m.objective_tag().to_string()),
            stage: StageMsg::from(out.frame.pose),
            notices: out.notices.iter().map(|n| n.to_string()).collect(),
            measurement: out.measurement,
        };
        Ok(Payload {
            ordinal,
            pipeline_dropped: out.dropped_so_far,
            msg,
        })
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    registry: Arc<ModelRegistry>,
    slides: Mutex<HashMap<String, Arc<VirtualSlide>>>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<Self, ScopeError> {
        let registry = Arc::new(ModelRegistry::load_dir(&config.models_dir)?);
        list_slides(&config.slides_dir)?;
        Ok(Self {
            config,
            registry,
            slides: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn list_slides(&self) -> Result<Vec<SlideMeta>, ApiError> {
        list_slides(&self.config.slides_dir).map_err(|e| ApiError::Internal(e.to_string()))
    }

    fn slide(&self, id: &str) -> Result<Arc<VirtualSlide>, ApiError> {
        if let Some(s) = self.slides.lock().expect("slides lock").get(id) {
            return Ok(s.clone());
        }
        let known = self.list_slides()?.iter().any(|m| m.id == id);
        if !known {
            return Err(ApiError::UnknownSlide(id.to_string()));
        }
        let slide = Arc::new(VirtualSlide::load(&self.config.slides_dir, id).map_err(|e| ApiError::Internal(e.to_string()))?);
        self.slides.lock().expect("slides lock").insert(id.to_string(), slide.clone());
        Ok(slide)
    }

    pub fn create_session(
        &self,
        slide_id: &str,
        fov_px: Option<usize>,
        config: Option<PipelineConfig>,
    ) -> Result<Arc<Session>, ApiError> {
        let slide = self.slide(slide_id)?;
        let mut config = config.unwrap_or_else(|| self.config.pipeline.clone());
        config.fov_px = fov_px.unwrap_or(self.config.fov_px);
        let scope = ScopeSession::new(slide, self.registry.clone(), config.fov_px)
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let id = uuid::Uuid::new_v4().to_string();
        let session = Arc::new(Session::new(id.clone(), scope, config));
        self.sessions.lock().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    /// Removes the session; its pipeline is stopped by the caller.
    pub fn remove_session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let s = self
            .sessions
            .lock()
            .expect("sessions lock")
            .remove(id)
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))?;
        s.closed.store(true, Ordering::SeqCst);
        Ok(s)
    }
}
