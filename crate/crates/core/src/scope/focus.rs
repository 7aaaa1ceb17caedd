use std::sync::Arc;

use super::capture::reflect;
use crate::inference::forward;
use crate::netgraph::NetGraph;
use crate::tensor::{logistic, Tensor};

/// Variance of the 4-neighbor Laplacian of luma divided by squared mean luma.
/// Borders use reflect-101.
pub fn laplacian_variance(rgb: &Tensor) -> f64 {
    let (h, w) = (rgb.height(), rgb.width());
    if h == 0 || w == 0 {
        return 0.0;
    }
    let luma: Vec<f64> = (0..h * w)
        .map(|i| {
            let p = rgb.pixel(i / w, i % w);
            match p.len() {
                3 => 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64,
                _ => p[0] as f64,
            }
        })
        .collect();
    let at = |y: isize, x: isize| luma[reflect(y, h) * w + reflect(x, w)];
    let n = (h * w) as f64;
    let mean_luma = luma.iter().sum::<f64>() / n;
    if mean_luma <= 0.0 {
        return 0.0;
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let l = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
            s += l;
            s2 += l * l;
        }
    }
    let var = (s2 / n - (s / n).powi(2)).max(0.0);
    var / (mean_luma * mean_luma)
}

/// Sharpness in `[0, 1]` via the default scorer.
pub fn focus_score(rgb: &Tensor) -> f64 {
    FocusScorer::default().score(rgb)
}

/// The focus slot of the pipeline: a calibrated sharpness metric or a
/// network whose mean output is taken as the in-focus probability.
#[derive(Debug, Clone)]
pub enum FocusScorer {
    Sharpness { midpoint_log10: f64, slope: f64 },
    Network(Arc<NetGraph>),
}

impl Default for FocusScorer {
    /// Calibrated on demo FOVs at every objective: in focus the log10
    /// sharpness is at least -3.15, with focus_z 3 at most -3.56.
    fn default() -> Self {
        FocusScorer::Sharpness {
            midpoint_log10: -3.35,
            slope: 8.0,
        }
    }
}

impl FocusScorer {
    pub fn score(&self, rgb: &Tensor) -> f64 {
        match self {
            FocusScorer::Sharpness { midpoint_log10, slope } => {
                let v = laplacian_variance(rgb);
                if v <= 0.0 {
                    0.0
                } else {
                    logistic(slope * (v.log10() - midpoint_log10))
                }
            }
            FocusScorer::Network(g) => match forward(g, rgb) {
                Ok(out) => {
                    let last = out.channel(out.channels() - 1);
                    let d = last.data();
                    (d.iter().map(|&v| v as f64).sum::<f64>() / d.len().max(1) as f64).clamp(0.0, 1.0)
                }
                Err(_) => 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::build_color_detector;
    use crate::scope::gaussian_blur;

    fn textured() -> Tensor {
        Tensor::from_fn(48, 48, 3, |y, x, c| {
            let v = ((y * 7 + x * 13 + c * 3) % 11) as f32 / 11.0;
            0.3 + 0.5 * v
        })
    }

    #[test]
    fn constant_scores_zero() {
        assert_eq!(focus_score(&Tensor::filled(16, 16, 3, 0.7)), 0.0);
        assert_eq!(focus_score(&Tensor::filled(16, 16, 3, 0.0)), 0.0);
    }

    #[test]
    fn blur_lowers_score_monotonically() {
        let img = textured();
        let scores: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&s| laplacian_variance(&gaussian_blur(&img, s)))
            .collect();
        assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{scores:?}");
        assert!(focus_score(&img) > focus_score(&gaussian_blur(&img, 3.0)));
    }

    #[test]
    fn network_scorer_uses_mean_output() {
        let det = Arc::new(build_color_detector([1.0, 0.0, 1.0], 0.2).unwrap());
        let s = FocusScorer::Network(det);
        let magenta = Tensor::from_fn(4, 4, 3, |_, _, c| [1.0, 0.0, 1.0][c]);
        assert!(s.score(&magenta) > 0.9);
        assert!(s.score(&Tensor::filled(4, 4, 3, 1.0)) < 0.1);
    }
}
