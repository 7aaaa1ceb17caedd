use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{mean_sd, run_pipeline, Controls, ExecMode, InferenceMode, PipelineConfig, PipelineError, QueuePolicy, Result};
use crate::scope::ScopeSession;

/// One line of the comparison table. Means and sample standard deviations
/// are over repetitions; each repetition contributes its mean frame latency
/// and its throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub config: String,
    pub latency_ms_mean: f64,
    pub latency_ms_sd: f64,
    pub fps_mean: f64,
    pub fps_sd: f64,
    pub frames_dropped: u64,
    #[serde(skip)]
    pub repetitions: usize,
}

/// The four lossless combinations of execution mode and inference mode.
pub fn paired_configs(fov_px: usize) -> Vec<PipelineConfig> {
    let mut out = Vec::new();
    for mode in [ExecMode::Sequential, ExecMode::Pipelined] {
        for inference_mode in [InferenceMode::SlidingWindow, InferenceMode::Fcn] {
            out.push(PipelineConfig {
                mode,
                inference_mode,
                queue_policy: QueuePolicy::Lossless,
                fov_px,
                ..PipelineConfig::default()
            });
        }
    }
    out
}

/// Runs every config `repetitions` times, each on a fresh session from
/// `make_session` so all configs see the same frame sequence. Rows come back
/// sorted by descending throughput.
pub fn bench(
    configs: &[PipelineConfig],
    make_session: impl Fn() -> std::result::Result<ScopeSession, crate::scope::ScopeError>,
    repetitions: usize,
    frames_per_rep: u64,
) -> Result<Vec<BenchRow>> {
    if repetitions < 2 {
        return Err(PipelineError::Config(format!("repetitions must be at least 2, got {repetitions}")));
    }
    if frames_per_rep == 0 {
        return Err(PipelineError::Config("frames_per_rep must be positive".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let (mut lat, mut fps, mut dropped) = (Vec::new(), Vec::new(), 0);
        for _ in 0..repetitions {
            let session = Mutex::new(make_session()?);
            let stats = run_pipeline(cfg, &session, Some(frames_per_rep), &Controls::default(), |_| true)?;
            lat.push(stats.latency_ms_mean);
            fps.push(stats.fps);
            dropped += stats.frames_dropped;
        }
        let (latency_ms_mean, latency_ms_sd) = mean_sd(&lat);
        let (fps_mean, fps_sd) = mean_sd(&fps);
        rows.push(BenchRow {
            config: cfg.label(),
            latency_ms_mean,
            latency_ms_sd,
            fps_mean,
            fps_sd,
            frames_dropped: dropped,
            repetitions,
        });
    }
    rows.sort_by(|a, b| b.fps_mean.total_cmp(&a.fps_mean));
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
