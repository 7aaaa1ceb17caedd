//! Six-stage frame runtime: capture, debayer, preprocess, inference,
//! postprocess, display-out. Runs either one frame at a time or with one
//! worker per stage and capacity-1 links between them.

mod bench;
mod slot;
mod stats;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{run_fcn, run_sliding_window, Heatmap, InferenceError};
use crate::overlay::{build_overlay, DisplayMode, FocusMeasurement, OverlayGraphic, OverlayStyle};
use crate::scope::{debayer, FocusScorer, FovFrame, ScopeError, ScopeSession, StageMark, NO_MODEL_NOTICE};

pub use bench::{bench, paired_configs, write_bench_csv, BenchRow};
pub use slot::LatestSlot;
pub use stats::{mean_sd, FrameTimings, PipelineStats, StatsCollector};

pub const STAGES: [&str; 6] = ["capture", "debayer", "preprocess", "inference", "postprocess", "display_out"];
pub const FOCUS_GATE_THRESHOLD: f64 = 0.5;
pub const OUT_OF_FOCUS_NOTICE: &str = "out of focus";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scope(#[from] ScopeError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("overlay serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("stage worker panicked")]
    WorkerPanic,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Sequential,
    Pipelined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    SlidingWindow,
    #[default]
    Fcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    #[default]
    Lossless,
    LatestWins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: ExecMode,
    pub inference_mode: InferenceMode,
    pub queue_policy: QueuePolicy,
    pub fov_px: usize,
    /// Fixed per-stage durations. Five entries cover capture through
    /// postprocess, six include display-out. A stage that finishes early
    /// sleeps out the remainder.
    pub synthetic_stage_delays_ms: Option<Vec<f64>>,
    /// Minimum spacing between capture starts (camera frame period).
    pub frame_interval_ms: Option<f64>,
    pub focus_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: ExecMode::Sequential,
            inference_mode: InferenceMode::Fcn,
            queue_policy: QueuePolicy::Lossless,
            fov_px: 512,
            synthetic_stage_delays_ms: None,
            frame_interval_ms: None,
            focus_threshold: FOCUS_GATE_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn label(&self) -> String {
        let m = match self.mode {
            ExecMode::Sequential => "sequential",
            ExecMode::Pipelined => "pipelined",
        };
        let i = match self.inference_mode {
            InferenceMode::SlidingWindow => "sliding",
            InferenceMode::Fcn => "fcn",
        };
        format!("{m}+{i}")
    }

    fn delays(&self) -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        if let Some(d) = &self.synthetic_stage_delays_ms {
            if !(d.len() == 5 || d.len() == 6) || d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(PipelineError::Config(format!(
                    "synthetic_stage_delays_ms needs 5 or 6 non-negative values, got {d:?}"
                )));
            }
            out[..d.len()].copy_from_slice(d);
        }
        Ok(out)
    }
}

/// Run-time knobs shared with whoever drives the pipeline.
#[derive(Debug)]
pub struct Controls {
    cancelled: AtomicBool,
    style: RwLock<OverlayStyle>,
    scorer: FocusScorer,
}

impl Default for Controls {
    fn default() -> Self {
        Self::new(OverlayStyle::default())
    }
}

impl Controls {
    pub fn new(style: OverlayStyle) -> Self {
        Self {
            cancelled: AtomicBool::new(false),
            style: RwLock::new(style),
            scorer: FocusScorer::default(),
        }
    }

    pub fn with_focus_scorer(mut self, scorer: FocusScorer) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    pub fn style(&self) -> OverlayStyle {
        self.style.read().expect("style lock poisoned").clone()
    }

    pub fn set_display_mode(&self, mode: DisplayMode) {
        self.style.write().expect("style lock poisoned").mode = mode;
    }

    pub fn update_style(&self, f: impl FnOnce(&mut OverlayStyle)) {
        f(&mut self.style.write().expect("style lock poisoned"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusGate {
    pub overlay_allowed: bool,
    pub notice: Option<&'static str>,
}

/// Allows the overlay iff the frame's focus score is at least `threshold`.
/// A frame without a score is treated as out of focus.
pub fn focus_gate(frame: &FovFrame, threshold: f64) -> FocusGate {
    let allowed = frame.focus_score.is_some_and(|s| s >= threshold);
    FocusGate {
        overlay_allowed: allowed,
        notice: (!allowed).then_some(OUT_OF_FOCUS_NOTICE),
    }
}

/// Everything the display receives for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: FovFrame,
    pub heatmap: Option<Heatmap>,
    pub overlay: OverlayGraphic,
    /// The serialized overlay; producing it ends the display-out stage.
    pub overlay_json: String,
    pub gate: FocusGate,
    pub measurement: Option<FocusMeasurement>,
    pub notices: Vec<&'static str>,
    pub timings: FrameTimings,
    /// Frames discarded by the runtime so far in this run.
    pub dropped_so_far: u64,
}

struct InFlight {
    frame: FovFrame,
    heatmap: Option<Heatmap>,
    gate: Option<FocusGate>,
    overlay: Option<OverlayGraphic>,
    overlay_json: String,
    measurement: Option<FocusMeasurement>,
    notices: Vec<&'static str>,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    controls: &'a Controls,
    delays: [f64; 6],
    epoch: Instant,
}

impl Ctx<'_> {
    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1e3
    }

    /// Runs `f` as stage `i`, padding to the synthetic delay if one is set.
    fn timed<R>(&self, i: usize, f: impl FnOnce() -> R) -> (StageMark, R) {
        let start = self.now_ms();
        let r = f();
        let target = start + self.delays[i];
        let now = self.now_ms();
        if target > now {
            std::thread::sleep(Duration::from_secs_f64((target - now) / 1e3));
        }
        (
            StageMark {
                start_ms: start,
                end_ms: self.now_ms().max(start),
            },
            r,
        )
    }

    fn capture(&self, session: &Mutex<ScopeSession>) -> Result<InFlight> {
        let (mark, frame) = self.timed(0, || session.lock().expect("session lock poisoned").capture());
        let mut frame = frame?;
        frame.stage_marks = vec![mark];
        Ok(InFlight {
            frame,
            heatmap: None,
            gate: None,
            overlay: None,
            overlay_json: String::new(),
            measurement: None,
            notices: Vec::new(),
        })
    }

    fn run_stage(&self, i: usize, w: &mut InFlight) -> Result<()> {
        let (mark, r) = self.timed(i, || self.stage_body(i, w));
        w.frame.stage_marks.push(mark);
        r
    }

    fn stage_body(&self, i: usize, w: &mut InFlight) -> Result<()> {
        match i {
            1 => {
                w.frame.rgb = Some(debayer(&w.frame.raw_mosaic)?);
            }
            2 => {
                let rgb = w.frame.rgb.as_ref().expect("debayered");
                w.frame.focus_score = Some(self.controls.scorer.score(rgb));
            }
            3 => {
                if let Some(model) = &w.frame.model {
                    let rgb = w.frame.rgb.as_ref().expect("debayered");
                    let h = match self.cfg.inference_mode {
                        InferenceMode::Fcn => run_fcn(model, rgb)?,
                        InferenceMode::SlidingWindow => run_sliding_window(model, rgb, None)?,
                    };
                    w.heatmap = Some(h.with_seq(w.frame.seq));
                }
            }
            4 => {
                let gate = focus_gate(&w.frame, self.cfg.focus_threshold);
                let style = self.controls.style();
                let mut overlay = OverlayGraphic::empty(style.mode, style.color_space);
                match &w.heatmap {
                    None => {
                        w.notices.push(NO_MODEL_NOTICE);
                        overlay.mode = DisplayMode::Off;
                    }
                    Some(_) if !gate.overlay_allowed => {
                        w.notices.push(OUT_OF_FOCUS_NOTICE);
                    }
                    Some(h) => {
                        let (g, m) = build_overlay(h, &style, w.frame.objective.um_per_px);
                        overlay = g;
                        w.measurement = m;
                    }
                }
                w.gate = Some(gate);
                w.overlay = Some(overlay);
            }
            5 => {
                w.overlay_json = serde_json::to_string(w.overlay.as_ref().expect("postprocessed"))?;
            }
            _ => unreachable!("stage index"),
        }
        Ok(())
    }

    fn finish(&self, w: InFlight, dropped: u64) -> FrameOutput {
        let timings = FrameTimings::new(w.frame.seq, w.frame.stage_marks.clone());
        FrameOutput {
            heatmap: w.heatmap,
            overlay: w.overlay.expect("postprocessed"),
            overlay_json: w.overlay_json,
            gate: w.gate.expect("postprocessed"),
            measurement: w.measurement,
            notices: w.notices,
            timings,
            dropped_so_far: dropped,
            frame: w.frame,
        }
    }
}

/// Paces capture starts to the camera frame period.
struct Pacer {
    interval_ms: Option<f64>,
    next_ms: f64,
}

impl Pacer {
    fn wait(&mut self, ctx: &Ctx) {
        if let Some(iv) = self.interval_ms {
            let now = ctx.now_ms();
            if self.next_ms > now {
                std::thread::sleep(Duration::from_secs_f64((self.next_ms - now) / 1e3));
            }
            self.next_ms = ctx.now_ms().max(self.next_ms) + iv;
        }
    }
}

/// Drives `session` for `n_frames` captures (`None`: until cancelled),
/// handing each finished frame to `sink` on the display-out worker. The sink
/// returns `false` to stop the run. Cancellation and sink stops drain frames
/// already in flight and return the statistics gathered so far.
pub fn run_pipeline<F>(
    cfg: &PipelineConfig,
    session: &Mutex<ScopeSession>,
    n_frames: Option<u64>,
    controls: &Controls,
    sink: F,
) -> Result<PipelineStats>
where
    F: FnMut(FrameOutput) -> bool + Send,
{
    let delays = cfg.delays()?;
    let session_fov = session.lock().expect("session lock poisoned").fov_px();
    if session_fov != cfg.fov_px {
        return Err(PipelineError::Config(format!(
            "config fov_px {} differs from session fov_px {session_fov}",
            cfg.fov_px
        )));
    }
    let ctx = Ctx {
        cfg,
        controls,
        delays,
        epoch: Instant::now(),
    };
    let mut pacer = Pacer {
        interval_ms: cfg.frame_interval_ms.filter(|v| *v > 0.0),
        next_ms: 0.0,
    };
    match cfg.mode {
        ExecMode::Sequential => run_sequential(&ctx, session, n_frames, &mut pacer, sink),
        ExecMode::Pipelined => run_pipelined(&ctx, session, n_frames, &mut pacer, sink),
    }
}

fn run_sequential<F>(
    ctx: &Ctx,
    session: &Mutex<ScopeSession>,
    n_frames: Option<u64>,
    pacer: &mut Pacer,
    mut sink: F,
) -> Result<PipelineStats>
where
    F: FnMut(FrameOutput) -> bool,
{
    let mut stats = StatsCollector::default();
    let mut k = 0u64;
    while n_frames.is_none_or(|n| k < n) {
        if ctx.controls.is_cancelled() {
            break;
        }
        pacer.wait(ctx);
        let mut w = ctx.capture(session)?;
        for i in 1..STAGES.len() {
            ctx.run_stage(i, &mut w)?;
        }
        let out = ctx.finish(w, 0);
        stats.push(&out.timings);
        k += 1;
        if !sink(out) {
            ctx.controls.cancel();
        }
    }
    Ok(stats.snapshot(0, ctx.controls.is_cancelled()))
}

fn run_pipelined<F>(
    ctx: &Ctx,
    session: &Mutex<ScopeSession>,
    n_frames: Option<u64>,
    pacer: &mut Pacer,
    mut sink: F,
) -> Result<PipelineStats>
where
    F: FnMut(FrameOutput) -> bool + Send,
{
    let latest = ctx.cfg.queue_policy == QueuePolicy::LatestWins;
    let dropped = Arc::new(AtomicU64::new(0));
    let error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let fail = |e: PipelineError| {
        error.lock().expect("error lock poisoned").get_or_insert(e);
        ctx.controls.cancel();
    };

    let mut txs = Vec::new();
    let mut rxs = Vec::new();
    for _ in 1..STAGES.len() {
        let (tx, rx) = slot::link::<InFlight>(latest, &dropped);
        txs.push(tx);
        rxs.push(rx);
    }
    let mut rxs = rxs.into_iter();
    let mut txs = txs.into_iter();

    let collected = std::thread::scope(|s| {
        let cap_tx = txs.next().expect("capture link");
        let fail_ref = &fail;
        s.spawn(move || {
            let mut k = 0u64;
            while n_frames.is_none_or(|n| k < n) && !ctx.controls.is_cancelled() {
                pacer.wait(ctx);
                match ctx.capture(session) {
                    Ok(w) => {
                        if !cap_tx.send(w) {
                            break;
                        }
                    }
                    Err(e) => {
                        fail_ref(e);
                        break;
                    }
                }
                k += 1;
            }
        });
        for i in 1..STAGES.len() - 1 {
            let rx = rxs.next().expect("stage input");
            let tx = txs.next().expect("stage output");
            s.spawn(move || {
                while let Some(mut w) = rx.recv() {
                    if let Err(e) = ctx.run_stage(i, &mut w) {
                        fail_ref(e);
                        break;
                    }
                    if !tx.send(w) {
                        break;
                    }
                }
            });
        }
        let rx = rxs.next().expect("display input");
        let dropped = &dropped;
        let display = s.spawn(move || {
            let mut stats = StatsCollector::default();
            while let Some(mut w) = rx.recv() {
                if let Err(e) = ctx.run_stage(STAGES.len() - 1, &mut w) {
                    fail_ref(e);
                    break;
                }
                let out = ctx.finish(w, dropped.load(Ordering::Relaxed));
                stats.push(&out.timings);
                if !sink(out) {
                    ctx.controls.cancel();
                }
            }
            stats
        });
        display.join()
    });
    let stats = collected.map_err(|_| PipelineError::WorkerPanic)?;
    if let Some(e) = error.into_inner().expect("error lock poisoned") {
        return Err(e);
    }
    Ok(stats.snapshot(dropped.load(Ordering::Relaxed), ctx.controls.is_cancelled()))
}
