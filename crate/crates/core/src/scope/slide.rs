use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_rgb_png, save_rgb_png, Result, ScopeError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TissueClass {
    Benign,
    Tumor,
}

/// Labeled region; vertices are `[x, y]` in slide pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: TissueClass,
    pub polygon: Vec<[f64; 2]>,
}

impl Annotation {
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.polygon.len().max(1) as f64;
        let (sx, sy) = self.polygon.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }

    /// Even-odd point-in-polygon test in slide pixels.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = self.polygon.len();
        for i in 0..n {
            let [x1, y1] = self.polygon[i];
            let [x2, y2] = self.polygon[(i + 1) % n];
            if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
                inside = !inside;
            }
        }
        inside
    }
}

/// Contents of `<id>.meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideMeta {
    pub id: String,
    pub base_um_per_px: f64,
    #[serde(default)]
    pub width_px: usize,
    #[serde(default)]
    pub height_px: usize,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

/// A whole-slide RGB raster in `[0, 1]` with its physical scale.
#[derive(Debug, Clone)]
pub struct VirtualSlide {
    id: String,
    image: Tensor,
    base_um_per_px: f64,
    annotations: Vec<Annotation>,
}

impl VirtualSlide {
    pub fn new(
        id: impl Into<String>,
        image: Tensor,
        base_um_per_px: f64,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        let id = id.into();
        if !(base_um_per_px > 0.0) {
            return Err(ScopeError::InvalidSlide(format!("{id}: base_um_per_px must be positive")));
        }
        if image.channels() != 3 {
            return Err(ScopeError::InvalidSlide(format!("{id}: image must be RGB")));
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        for a in &annotations {
            if a.polygon.len() < 3 {
                return Err(ScopeError::InvalidSlide(format!("{id}: annotation needs 3+ vertices")));
            }
            if a.polygon.iter().any(|p| p[0] < 0.0 || p[1] < 0.0 || p[0] > w || p[1] > h) {
                return Err(ScopeError::InvalidSlide(format!("{id}: annotation outside raster")));
            }
        }
        Ok(Self {
            id,
            image,
            base_um_per_px,
            annotations,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn base_um_per_px(&self) -> f64 {
        self.base_um_per_px
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn width_um(&self) -> f64 {
        self.image.width() as f64 * self.base_um_per_px
    }

    pub fn height_um(&self) -> f64 {
        self.image.height() as f64 * self.base_um_per_px
    }

    pub fn contains_um(&self, x_um: f64, y_um: f64) -> bool {
        (0.0..=self.width_um()).contains(&x_um) && (0.0..=self.height_um()).contains(&y_um)
    }

    pub fn meta(&self) -> SlideMeta {
        SlideMeta {
            id: self.id.clone(),
            base_um_per_px: self.base_um_per_px,
            width_px: self.image.width(),
            height_px: self.image.height(),
            annotations: self.annotations.clone(),
        }
    }

    /// Writes `<dir>/<id>.png` (8-bit RGB) and `<dir>/<id>.meta`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_rgb_png(&self.image, &dir.join(format!("{}.png", self.id)))?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        fs::write(dir.join(format!("{}.meta", self.id)), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path, id: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{id}.meta"));
        if !meta_path.exists() {
            return Err(ScopeError::UnknownSlide(id.to_string()));
        }
        let meta: SlideMeta =
            serde_json::from_str(&fs::read_to_string(meta_path)?).map_err(|e| ScopeError::Meta(e.to_string()))?;
        let image = load_rgb_png(&dir.join(format!("{id}.png")))?;
        VirtualSlide::new(meta.id, image, meta.base_um_per_px, meta.annotations)
    }
}

/// Metadata of every slide in `dir`, sorted by id.
pub fn list_slides(dir: &Path) -> Result<Vec<SlideMeta>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "meta") {
            let meta: SlideMeta =
                serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| ScopeError::Meta(e.to_string()))?;
            out.push(meta);
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
