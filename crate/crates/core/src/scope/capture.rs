use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Objective, Result, ScopeError, VirtualSlide};
use crate::netgraph::NetGraph;
use crate::tensor::Tensor;

/// Stage coordinates of the FOV center in micrometers, plus focus error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StagePose {
    pub x_um: f64,
    pub y_um: f64,
    #[serde(default)]
    pub focus_z: f64,
}

impl StagePose {
    pub fn new(x_um: f64, y_um: f64) -> Self {
        Self { x_um, y_um, focus_z: 0.0 }
    }

    pub fn with_focus(mut self, focus_z: f64) -> Self {
        self.focus_z = focus_z;
        self
    }
}

/// Wall-clock interval of one pipeline stage, in ms since the run epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMark {
    pub start_ms: f64,
    pub end_ms: f64,
}

/// One captured field of view as it moves down the pipeline.
#[derive(Debug, Clone)]
pub struct FovFrame {
    pub seq: u64,
    pub slide_id: String,
    /// Single-channel RGGB raster.
    pub raw_mosaic: Tensor,
    /// Filled by the debayer stage.
    pub rgb: Option<Tensor>,
    pub pose: StagePose,
    pub objective: Objective,
    /// Model for this frame's objective, `None` when no model is registered.
    pub model: Option<Arc<NetGraph>>,
    /// One entry per completed stage, in stage order.
    pub stage_marks: Vec<StageMark>,
    pub focus_score: Option<f64>,
}

/// Slide pixel value with white outside the raster.
fn fetch(img: &Tensor, y: isize, x: isize, c: usize) -> f32 {
    if y < 0 || x < 0 || y as usize >= img.height() || x as usize >= img.width() {
        1.0
    } else {
        img.get(y as usize, x as usize, c)
    }
}

fn bilinear(img: &Tensor, y: f64, x: f64, out: &mut [f64; 3]) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    for (c, o) in out.iter_mut().enumerate() {
        let a = fetch(img, y0, x0, c) as f64;
        let b = fetch(img, y0, x0 + 1, c) as f64;
        let d = fetch(img, y0 + 1, x0, c) as f64;
        let e = fetch(img, y0 + 1, x0 + 1, c) as f64;
        *o = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy;
    }
}

/// Ideal in-focus RGB view of `fov_px` square camera pixels centered on the
/// pose. Downscaling averages `ceil(f)^2` bilinear samples per pixel, `f`
/// being slide pixels per camera pixel.
pub fn render_fov(slide: &VirtualSlide, pose: StagePose, objective: &Objective, fov_px: usize) -> Result<Tensor> {
    if fov_px == 0 || fov_px % 2 != 0 {
        return Err(ScopeError::BadFovSize(fov_px));
    }
    if !slide.contains_um(pose.x_um, pose.y_um) {
        return Err(ScopeError::OutOfBounds {
            x_um: pose.x_um,
            y_um: pose.y_um,
        });
    }
    let base = slide.base_um_per_px();
    let f = objective.um_per_px / base;
    let n = f.ceil().max(1.0) as usize;
    let half = fov_px as f64 / 2.0;
    let img = slide.image();
    let mut out = Tensor::zeros(fov_px, fov_px, 3);
    let mut s = [0.0f64; 3];
    for y in 0..fov_px {
        for x in 0..fov_px {
            let mut acc = [0.0f64; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let cy = y as f64 + (sy as f64 + 0.5) / n as f64 - half;
                    let cx = x as f64 + (sx as f64 + 0.5) / n as f64 - half;
                    // Slide pixel centers sit at integer + 0.5 in slide px.
                    let py = (pose.y_um + cy * objective.um_per_px) / base - 0.5;
                    let px = (pose.x_um + cx * objective.um_per_px) / base - 0.5;
                    bilinear(img, py, px, &mut s);
                    for c in 0..3 {
                        acc[c] += s[c];
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(y, x, c, (a / (n * n) as f64) as f32);
            }
        }
    }
    if pose.focus_z != 0.0 {
        out = gaussian_blur(&out, pose.focus_z.abs());
    }
    Ok(out)
}

/// Captures a raw frame: render, defocus blur with sigma `|focus_z|` camera
/// pixels, then RGGB mosaic. The caller assigns `seq`.
pub fn capture_fov(
    slide: &VirtualSlide,
    pose: StagePose,
    objective: &Objective,
    fov_px: usize,
) -> Result<FovFrame> {
    let rgb = render_fov(slide, pose, objective, fov_px)?;
    Ok(FovFrame {
        seq: 0,
        slide_id: slide.id().to_string(),
        raw_mosaic: mosaic_rggb(&rgb),
        rgb: None,
        pose,
        objective: *objective,
        model: None,
        stage_marks: Vec::new(),
        focus_score: None,
    })
}

/// Keeps one channel per site: R at (even, even), B at (odd, odd), G elsewhere.
pub fn mosaic_rggb(rgb: &Tensor) -> Tensor {
    Tensor::from_fn(rgb.height(), rgb.width(), 1, |y, x, _| {
        let c = match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        };
        rgb.get(y, x, c)
    })
}

/// Reflect-101 index: -1 -> 1, n -> n-2.
pub(super) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and reflect-101 borders.
pub fn gaussian_blur(t: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return t.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= sum);
    let (h, w, ch) = (t.height(), t.width(), t.channels());
    let horiz = Tensor::from_fn(h, w, ch, |y, x, c| {
        let v: f64 = taps
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * t.get(y, reflect(x as isize + k as isize - radius, w), c) as f64)
            .sum();
        v as f32
    });
    Tensor::from_fn(h, w, ch, |y, x, c| {
        let v: f64 = taps
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * horiz.get(reflect(y as isize + k as isize - radius, h), x, c) as f64)
            .sum();
        v as f32
    })
}
