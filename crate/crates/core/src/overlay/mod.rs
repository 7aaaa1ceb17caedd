//! Heatmap to display: threshold, label, outline, measure, compose.

mod components;
mod contour;
mod font;
mod render;

use serde::{Deserialize, Serialize};

use crate::inference::Heatmap;

pub use components::{connected_components, Labels, Mask, Region};
pub use contour::{
    cell_center_continuous, feret_diameter, grid_corner_px, measure_largest_focus, point_in_loops, trace_contours,
    Contour, FocusMeasurement,
};
pub use font::{text_width_px, GLYPH_H, GLYPH_W};
pub use render::{colormap, compose_display, HEATMAP_ALPHA, LINE_HALF_WIDTH_PX};

pub const GREEN: [u8; 3] = [0, 255, 0];

/// Cell is positive iff its value is at least `t`.
pub fn threshold_heatmap(h: &Heatmap, t: f32) -> Mask {
    Mask::new(h.rows(), h.cols(), h.values().iter().map(|&v| v >= t).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayMode {
    #[default]
    Outline,
    Heatmap,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    #[default]
    Rgb,
    GreenOnly,
}

/// One closed loop, stored as `[x0, y0, x1, y1, ...]` in FOV pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlayPolygon {
    pub points: Vec<f64>,
    pub class_tag: String,
    pub color: [u8; 3],
    pub hole: bool,
}

impl OverlayPolygon {
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        self.points.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
    }
}

/// Text with its top-left corner at `anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlayText {
    pub text: String,
    pub anchor: [f64; 2],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlayGraphic {
    pub mode: DisplayMode,
    pub color_space: ColorSpace,
    pub polygons: Vec<OverlayPolygon>,
    pub texts: Vec<OverlayText>,
    /// Source values for heatmap mode; never serialized.
    #[serde(skip)]
    pub heatmap: Option<Heatmap>,
}

impl OverlayGraphic {
    pub fn empty(mode: DisplayMode, color_space: ColorSpace) -> Self {
        Self {
            mode,
            color_space,
            ..Self::default()
        }
    }

    pub fn add_contours(&mut self, contours: &[Contour], class_tag: &str, color: [u8; 3]) {
        for c in contours {
            for (i, lp) in c.loops().enumerate() {
                self.polygons.push(OverlayPolygon {
                    points: lp.iter().flat_map(|p| [p[0], p[1]]).collect(),
                    class_tag: class_tag.to_string(),
                    color,
                    hole: i > 0,
                });
            }
        }
    }

    /// Drops drawable content while keeping mode and color space.
    pub fn cleared(mut self) -> Self {
        self.polygons.clear();
        self.texts.clear();
        self.heatmap = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayStyle {
    pub threshold: f32,
    pub class_tag: String,
    pub color: [u8; 3],
    pub mode: DisplayMode,
    pub color_space: ColorSpace,
    /// Print the size of the largest region next to it.
    pub measure: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            class_tag: "tumor".into(),
            color: GREEN,
            mode: DisplayMode::Outline,
            color_space: ColorSpace::Rgb,
            measure: true,
        }
    }
}

/// Formats a size label such as `"0.42 MM"`.
pub fn size_label(diameter_mm: f64) -> String {
    format!("{diameter_mm:.2} MM")
}

/// Full postprocess step for one heatmap. Mode off yields an empty graphic.
pub fn build_overlay(h: &Heatmap, style: &OverlayStyle, um_per_px: f64) -> (OverlayGraphic, Option<FocusMeasurement>) {
    let mut g = OverlayGraphic::empty(style.mode, style.color_space);
    if style.mode == DisplayMode::Off {
        return (g, None);
    }
    let labels = connected_components(&threshold_heatmap(h, style.threshold));
    let contours = trace_contours(&labels, &h.geometry());
    let measurement = measure_largest_focus(&labels, &contours, um_per_px);
    if style.mode == DisplayMode::Outline {
        g.add_contours(&contours, &style.class_tag, style.color);
    } else {
        g.heatmap = Some(h.clone());
    }
    if let (true, Some(m)) = (style.measure, measurement) {
        let contour = contours.iter().find(|c| c.region == m.region_id).expect("measured region has a contour");
        let (x, y) = contour
            .outer
            .iter()
            .fold((f64::INFINITY, f64::INFINITY), |(x, y), p| (x.min(p[0]), y.min(p[1])));
        let text_y = if y >= (GLYPH_H + 3) as f64 { y - (GLYPH_H + 3) as f64 } else { y + 3.0 };
        g.texts.push(OverlayText {
            text: size_label(m.diameter_mm),
            anchor: [x.max(0.0).floor(), text_y.floor()],
            color: style.color,
        });
    }
    (g, measurement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::GridGeometry;

    fn geom() -> GridGeometry {
        GridGeometry {
            receptive_field_px: 1,
            output_stride_px: 1,
            offset_px: 0,
            canonical_patch_px: 1,
            start_px: 0,
        }
    }

    #[test]
    fn threshold_extremes() {
        let h = Heatmap::new(2, 2, vec![0.0, 0.3, 0.7, 1.0], geom());
        assert_eq!(threshold_heatmap(&h, 0.0).count(), 4);
        assert_eq!(threshold_heatmap(&h, 0.7).count(), 2);
        assert_eq!(threshold_heatmap(&h, 1.0 + 1e-6).count(), 0);
    }

    #[test]
    fn graphic_json_uses_flat_coordinates() {
        let h = Heatmap::new(3, 3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], geom());
        let (g, m) = build_overlay(&h, &OverlayStyle::default(), 1.0);
        assert_eq!(m.unwrap().region_id, 1);
        let v: serde_json::Value = serde_json::to_value(&g).unwrap();
        assert_eq!(v["mode"], "outline");
        assert_eq!(v["color_space"], "rgb");
        assert_eq!(v["polygons"][0]["points"], serde_json::json!([1.0, 1.0, 2.0, 1.0, 2.0, 2.0, 1.0, 2.0]));
        assert!(v.get("heatmap").is_none());
        assert_eq!(g.texts[0].text, "0.00 MM");
        let back: OverlayGraphic = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn off_mode_builds_nothing() {
        let h = Heatmap::new(1, 1, vec![1.0], geom());
        let style = OverlayStyle {
            mode: DisplayMode::Off,
            ..OverlayStyle::default()
        };
        let (g, m) = build_overlay(&h, &style, 1.0);
        assert!(g.polygons.is_empty() && g.texts.is_empty() && m.is_none());
    }
}
