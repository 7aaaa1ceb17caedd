use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Hue (radians), saturation and mean optical density.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HsdPoint {
    pub hue: f64,
    pub saturation: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsdSample {
    pub point: HsdPoint,
    /// Chroma coordinates before the polar conversion.
    pub cx: f64,
    pub cy: f64,
    /// A channel was outside `(0, i0]` and was clamped.
    pub clamped: bool,
}

/// Pixels below this mean optical density count as background.
pub const TISSUE_DENSITY_MIN: f64 = 0.05;

fn chroma_to_point(cx: f64, cy: f64, density: f64) -> HsdPoint {
    let saturation = (cx * cx + cy * cy).sqrt();
    HsdPoint {
        hue: if saturation == 0.0 { 0.0 } else { cy.atan2(cx) },
        saturation,
        density,
    }
}

/// Optical densities `OD_c = -log10(c / i0)`, density `D = mean OD`, chroma
/// `cx = OD_R / D - 1`, `cy = (OD_G - OD_B) / (D sqrt 3)`. Channels at or
/// below zero are raised to one 8-bit count of `i0`; channels above `i0`
/// are lowered to `i0`.
pub fn hsd_transform(rgb: [f64; 3], i0: f64) -> HsdSample {
    let floor = i0 / 255.0;
    let mut clamped = false;
    let od = rgb.map(|c| {
        let c = if c <= 0.0 {
            clamped = true;
            floor
        } else if c > i0 {
            clamped = true;
            i0
        } else {
            c
        };
        -(c / i0).log10()
    });
    let density = (od[0] + od[1] + od[2]) / 3.0;
    if density <= 0.0 {
        return HsdSample {
            point: HsdPoint::default(),
            cx: 0.0,
            cy: 0.0,
            clamped,
        };
    }
    let cx = od[0] / density - 1.0;
    let cy = (od[1] - od[2]) / (density * 3f64.sqrt());
    HsdSample {
        point: chroma_to_point(cx, cy, density),
        cx,
        cy,
        clamped,
    }
}

/// Per-image summary over tissue pixels (density >= `TISSUE_DENSITY_MIN`):
/// hue and saturation of the mean chroma, mean density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorRow {
    pub image_id: String,
    pub hue: f64,
    pub saturation: f64,
    pub density: f64,
    pub tissue_pixels: usize,
    /// No tissue: left out of hue plots.
    pub excluded: bool,
}

pub fn image_hsd(image_id: &str, rgb: &Tensor) -> ColorRow {
    let (mut sx, mut sy, mut sd, mut n) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..rgb.height() * rgb.width() {
        let p = rgb.pixel(i / rgb.width(), i % rgb.width());
        let s = hsd_transform([p[0] as f64, p[1] as f64, p[2] as f64], 1.0);
        if s.point.density >= TISSUE_DENSITY_MIN {
            sx += s.cx;
            sy += s.cy;
            sd += s.point.density;
            n += 1;
        }
    }
    if n == 0 {
        return ColorRow {
            image_id: image_id.to_string(),
            hue: 0.0,
            saturation: 0.0,
            density: 0.0,
            tissue_pixels: 0,
            excluded: true,
        };
    }
    let k = n as f64;
    let p = chroma_to_point(sx / k, sy / k, sd / k);
    ColorRow {
        image_id: image_id.to_string(),
        hue: p.hue,
        saturation: p.saturation,
        density: p.density,
        tissue_pixels: n,
        excluded: p.saturation == 0.0,
    }
}

pub fn color_summary<'a>(images: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<ColorRow> {
    images.into_iter().map(|(id, t)| image_hsd(id, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub image_id: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

/// Histogram of per-pixel optical density over `[0, max_density)` in `bins`
/// equal bins; larger densities land in the last bin.
pub fn density_histogram(image_id: &str, rgb: &Tensor, bins: usize, max_density: f64) -> Vec<DensityBin> {
    let mut counts = vec![0u64; bins];
    let width = max_density / bins as f64;
    for i in 0..rgb.height() * rgb.width() {
        let p = rgb.pixel(i / rgb.width(), i % rgb.width());
        let d = hsd_transform([p[0] as f64, p[1] as f64, p[2] as f64], 1.0).point.density;
        counts[((d / width) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| DensityBin {
            image_id: image_id.to_string(),
            bin_lo: b as f64 * width,
            bin_hi: (b + 1) as f64 * width,
            count,
        })
        .collect()
}
