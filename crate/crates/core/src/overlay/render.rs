use super::font::text_pixels;
use super::{grid_corner_px, ColorSpace, DisplayMode, OverlayGraphic};
use crate::tensor::Tensor;

pub const HEATMAP_ALPHA: f32 = 0.4;
/// A pixel is on a line when its center lies within this distance of the
/// segment, giving 2 px strokes.
pub const LINE_HALF_WIDTH_PX: f64 = 1.0;

/// Blue (0) through green (0.5) to red (1).
pub fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [v, 1.0 - (2.0 * v - 1.0).abs(), 1.0 - v]
}

fn seg_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (ex, ey) = (p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
    ex * ex + ey * ey
}

struct Painter<'a> {
    out: &'a mut Tensor,
    green_only: bool,
}

impl Painter<'_> {
    fn paint(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        let chans = self.out.channels();
        for c in 0..chans.min(3) {
            if self.green_only && c != 1 {
                continue;
            }
            // Green-only displays carry the color's brightness in G.
            let target = if self.green_only { color[0].max(color[1]).max(color[2]) } else { color[c] };
            let v = self.out.get(y, x, c);
            self.out.set(y, x, c, (1.0 - alpha) * v + alpha * target);
        }
    }
}

fn to_f32(c: [u8; 3]) -> [f32; 3] {
    c.map(|v| v as f32 / 255.0)
}

/// Draws the graphic onto a copy of `fov_rgb`. Pixels that no stroke, glyph
/// or heatmap cell touches are returned bit-identical.
pub fn compose_display(fov_rgb: &Tensor, g: &OverlayGraphic) -> Tensor {
    let mut out = fov_rgb.clone();
    if g.mode == DisplayMode::Off {
        return out;
    }
    let (h, w) = (out.height(), out.width());
    let mut p = Painter {
        out: &mut out,
        green_only: g.color_space == ColorSpace::GreenOnly,
    };

    if g.mode == DisplayMode::Heatmap {
        if let Some(hm) = &g.heatmap {
            let geo = hm.geometry();
            let j = geo.output_stride_px as f64;
            let x0 = grid_corner_px(&geo, 0);
            let y0 = x0;
            for y in 0..h {
                let row = ((y as f64 + 0.5 - y0) / j).floor();
                if row < 0.0 || row >= hm.rows() as f64 {
                    continue;
                }
                for x in 0..w {
                    let col = ((x as f64 + 0.5 - x0) / j).floor();
                    if col < 0.0 || col >= hm.cols() as f64 {
                        continue;
                    }
                    p.paint(y, x, colormap(hm.get(row as usize, col as usize)), HEATMAP_ALPHA);
                }
            }
        }
    }

    if g.mode == DisplayMode::Outline {
        let r2 = LINE_HALF_WIDTH_PX * LINE_HALF_WIDTH_PX;
        for poly in &g.polygons {
            let color = to_f32(poly.color);
            let v = poly.vertices();
            for i in 0..v.len() {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                let lo_x = (a[0].min(b[0]) - LINE_HALF_WIDTH_PX - 0.5).floor().max(0.0) as usize;
                let hi_x = (a[0].max(b[0]) + LINE_HALF_WIDTH_PX).ceil().min(w as f64) as usize;
                let lo_y = (a[1].min(b[1]) - LINE_HALF_WIDTH_PX - 0.5).floor().max(0.0) as usize;
                let hi_y = (a[1].max(b[1]) + LINE_HALF_WIDTH_PX).ceil().min(h as f64) as usize;
                for y in lo_y..hi_y {
                    for x in lo_x..hi_x {
                        if seg_dist2([x as f64 + 0.5, y as f64 + 0.5], a, b) <= r2 {
                            p.paint(y, x, color, 1.0);
                        }
                    }
                }
            }
        }
    }

    for t in &g.texts {
        let color = to_f32(t.color);
        let (ax, ay) = (t.anchor[0].floor() as i64, t.anchor[1].floor() as i64);
        for (dx, dy) in text_pixels(&t.text) {
            let (x, y) = (ax + dx as i64, ay + dy as i64);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                p.paint(y as usize, x as usize, color, 1.0);
            }
        }
    }
    out
}
