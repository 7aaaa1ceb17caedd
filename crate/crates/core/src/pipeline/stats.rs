use serde::{Deserialize, Serialize};

use super::STAGES;
use crate::scope::StageMark;

/// Per-frame stage marks, in ms since the run epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTimings {
    pub seq: u64,
    pub marks: Vec<StageMark>,
    /// `display-out end - capture start`.
    pub latency_ms: f64,
}

impl FrameTimings {
    pub fn new(seq: u64, marks: Vec<StageMark>) -> Self {
        assert_eq!(marks.len(), STAGES.len(), "one mark per stage");
        let latency_ms = marks[STAGES.len() - 1].end_ms - marks[0].start_ms;
        Self { seq, marks, latency_ms }
    }

    pub fn stage_ms(&self) -> Vec<f64> {
        self.marks.iter().map(|m| m.end_ms - m.start_ms).collect()
    }

    pub fn display_ready_ms(&self) -> f64 {
        self.marks[STAGES.len() - 1].end_ms
    }
}

/// Mean and sample standard deviation; sd is 0 for fewer than 2 values.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub latency_ms_mean: f64,
    pub latency_ms_sd: f64,
    /// Delivered frames per second between the first and last display-ready
    /// marks; `1000 / latency` for a single frame.
    pub fps: f64,
    /// Run stopped by cancellation or a closed session.
    pub cancelled: bool,
    /// Most recent frames, oldest first.
    pub recent: Vec<FrameTimings>,
}

/// Accumulates timings as frames reach the display.
#[derive(Debug, Clone, Default)]
pub struct StatsCollector {
    latencies: Vec<f64>,
    first_ready_ms: Option<f64>,
    last_ready_ms: f64,
    recent: std::collections::VecDeque<FrameTimings>,
}

impl StatsCollector {
    pub const RECENT: usize = 120;

    pub fn push(&mut self, t: &FrameTimings) {
        self.latencies.push(t.latency_ms);
        self.first_ready_ms.get_or_insert(t.display_ready_ms());
        self.last_ready_ms = t.display_ready_ms();
        if self.recent.len() == Self::RECENT {
            self.recent.pop_front();
        }
        self.recent.push_back(t.clone());
    }

    pub fn fps(&self) -> f64 {
        match (self.latencies.len(), self.first_ready_ms) {
            (0, _) | (_, None) => 0.0,
            (1, _) => 1000.0 / self.latencies[0].max(f64::MIN_POSITIVE),
            (n, Some(first)) => {
                let span = self.last_ready_ms - first;
                if span > 0.0 {
                    (n - 1) as f64 * 1000.0 / span
                } else {
                    0.0
                }
            }
        }
    }

    pub fn snapshot(&self, dropped: u64, cancelled: bool) -> PipelineStats {
        let (mean, sd) = mean_sd(&self.latencies);
        PipelineStats {
            frames_delivered: self.latencies.len() as u64,
            frames_dropped: dropped,
            latency_ms_mean: mean,
            latency_ms_sd: sd,
            fps: self.fps(),
            cancelled,
            recent: self.recent.iter().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u64, start: f64, durations: [f64; 6]) -> FrameTimings {
        let mut t = start;
        let marks = durations
            .iter()
            .map(|d| {
                let m = StageMark {
                    start_ms: t,
                    end_ms: t + d,
                };
                t += d;
                m
            })
            .collect();
        FrameTimings::new(seq, marks)
    }

    #[test]
    fn latency_is_capture_start_to_display_end() {
        let f = frame(0, 5.0, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.latency_ms, 21.0);
        assert_eq!(f.stage_ms(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn fps_uses_display_intervals() {
        let mut c = StatsCollector::default();
        for k in 0..5 {
            c.push(&frame(k, 10.0 * k as f64, [5.0; 6]));
        }
        let s = c.snapshot(3, false);
        assert!((s.fps - 100.0).abs() < 1e-9);
        assert_eq!((s.latency_ms_mean, s.latency_ms_sd), (30.0, 0.0));
        assert_eq!(s.frames_dropped, 3);

        let mut one = StatsCollector::default();
        one.push(&frame(0, 0.0, [5.0; 6]));
        assert!((one.fps() - 1000.0 / 30.0).abs() < 1e-9);
    }

    #[test]
    fn sample_sd() {
        let (m, sd) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
