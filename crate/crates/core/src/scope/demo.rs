//! Synthetic demo data: slides with pink or purple benign tissue and brown
//! tumor foci, magnification-specific color-detector models, reference
//! networks and a labeled FOV manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    debayer, load_rgb_png, save_rgb_png, Annotation, ModelRegistry, Objective, ObjectiveName, Result, ScopeError, ScopeSession, StagePose,
    TissueClass, VirtualSlide,
};
use crate::evalkit::{fov_likelihood, write_manifest, ManifestRow};
use crate::inference::run_fcn;
use crate::netgraph::{build_color_detector, build_mini_inception, build_mini_inception_naive, NetGraph};
use crate::tensor::Tensor;

pub const PINK: [f32; 3] = [0.93, 0.62, 0.78];
pub const PURPLE: [f32; 3] = [0.40, 0.28, 0.62];
pub const DARK_PURPLE: [f32; 3] = [0.25, 0.15, 0.45];
pub const TUMOR_BROWN: [f32; 3] = [0.60, 0.30, 0.15];
pub const DETECTOR_TOLERANCE: f32 = 0.2;
/// Uniform per-channel jitter on tissue pixels.
pub const TISSUE_NOISE: f32 = 0.04;
/// Objectives that get a color-detector model; 4X deliberately has none.
pub const MODEL_OBJECTIVES: [ObjectiveName; 3] = [ObjectiveName::X10, ObjectiveName::X20, ObjectiveName::X40];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StainFamily {
    /// Pink stroma with purple nuclei.
    Pink,
    /// Purple stroma with dark nuclei.
    Purple,
}

impl StainFamily {
    fn tissue(self) -> [f32; 3] {
        match self {
            StainFamily::Pink => PINK,
            StainFamily::Purple => PURPLE,
        }
    }

    fn nucleus(self) -> [f32; 3] {
        match self {
            StainFamily::Pink => PURPLE,
            StainFamily::Purple => DARK_PURPLE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StainFamily::Pink => "pink",
            StainFamily::Purple => "purple",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    pub slide_px: usize,
    pub base_um_per_px: f64,
    pub families: Vec<StainFamily>,
    pub tumors_per_slide: usize,
    pub benign_per_slide: usize,
    pub fov_px: usize,
    pub fov_objective: ObjectiveName,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            slide_px: 2048,
            base_um_per_px: 0.25,
            families: vec![StainFamily::Pink, StainFamily::Pink, StainFamily::Purple, StainFamily::Purple],
            tumors_per_slide: 3,
            benign_per_slide: 5,
            fov_px: 128,
            fov_objective: ObjectiveName::X10,
        }
    }
}

/// What `generate` wrote, relative to the output directory.
#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub slides_dir: PathBuf,
    pub models_dir: PathBuf,
    pub nets_dir: PathBuf,
    pub manifest: PathBuf,
    pub slide_ids: Vec<String>,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// 64 vertices starting at a major-axis endpoint, so both endpoints are vertices.
    fn polygon(&self) -> Vec<[f64; 2]> {
        let (s, c) = self.theta.sin_cos();
        (0..64)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 64.0;
                let (u, v) = (self.a * t.cos(), self.b * t.sin());
                [self.cx + u * c - v * s, self.cy + u * s + v * c]
            })
            .collect()
    }

    fn paint(&self, img: &mut Tensor, color: [f32; 3], rng: &mut ChaCha8Rng, noise: f32) {
        let r = self.a.max(self.b).ceil() as isize + 1;
        let (h, w) = (img.height() as isize, img.width() as isize);
        for y in (self.cy as isize - r).max(0)..(self.cy as isize + r).min(h) {
            for x in (self.cx as isize - r).max(0)..(self.cx as isize + r).min(w) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    for (c, v) in color.iter().enumerate() {
                        let jitter = rng.random_range(-noise..=noise);
                        img.set(y as usize, x as usize, c, (v + jitter).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
}

/// Places ellipses by rejection sampling so that their bounding circles stay
/// `gap` px apart and clear of the slide border.
fn place(
    rng: &mut ChaCha8Rng,
    placed: &mut Vec<(Ellipse, TissueClass)>,
    size: f64,
    label: TissueClass,
    radii: (f64, f64),
    gap: f64,
) -> Result<Ellipse> {
    for _ in 0..10_000 {
        let a = rng.random_range(radii.0..radii.1);
        let b = a * rng.random_range(0.6..1.0);
        let margin = a + gap;
        if 2.0 * margin >= size {
            break;
        }
        let e = Ellipse {
            cx: rng.random_range(margin..size - margin),
            cy: rng.random_range(margin..size - margin),
            a,
            b,
            theta: rng.random_range(0.0..std::f64::consts::PI),
        };
        let clear = placed
            .iter()
            .all(|(o, _)| ((o.cx - e.cx).powi(2) + (o.cy - e.cy).powi(2)).sqrt() > o.a + e.a + gap);
        if clear {
            placed.push((e, label));
            return Ok(e);
        }
    }
    Err(ScopeError::InvalidSlide("demo slide too crowded; enlarge slide_px".into()))
}

/// Builds one synthetic slide. FOVs of `clear_px` slide pixels centered on an
/// annotation never reach a neighboring annotation.
pub fn synth_slide(
    id: &str,
    family: StainFamily,
    cfg: &DemoConfig,
    clear_px: f64,
    rng: &mut ChaCha8Rng,
) -> Result<VirtualSlide> {
    let n = cfg.slide_px;
    let mut img = Tensor::filled(n, n, 3, 1.0);
    for v in img.data_mut() {
        *v = 1.0 - rng.random_range(0.0..0.02f32);
    }
    let size = n as f64;
    let mut placed = Vec::new();
    for _ in 0..cfg.tumors_per_slide {
        place(rng, &mut placed, size, TissueClass::Tumor, (size * 0.02, size * 0.04), clear_px)?;
    }
    for _ in 0..cfg.benign_per_slide {
        place(rng, &mut placed, size, TissueClass::Benign, (size * 0.03, size * 0.07), clear_px)?;
    }
    let mut annotations = Vec::new();
    for (e, label) in &placed {
        match label {
            TissueClass::Tumor => e.paint(&mut img, TUMOR_BROWN, rng, TISSUE_NOISE),
            TissueClass::Benign => {
                e.paint(&mut img, family.tissue(), rng, TISSUE_NOISE);
                let nuclei = (e.a * e.b / 150.0) as usize;
                for _ in 0..nuclei {
                    let (t, rr) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random::<f64>().sqrt() * 0.85);
                    let (s, c) = e.theta.sin_cos();
                    let (u, v) = (e.a * rr * t.cos(), e.b * rr * t.sin());
                    let radius = rng.random_range(2.5..5.0);
                    let nucleus = Ellipse {
                        cx: e.cx + u * c - v * s,
                        cy: e.cy + u * s + v * c,
                        a: radius,
                        b: radius,
                        theta: 0.0,
                    };
                    nucleus.paint(&mut img, family.nucleus(), rng, TISSUE_NOISE);
                }
            }
        }
        annotations.push(Annotation {
            label: *label,
            polygon: e.polygon(),
        });
    }
    VirtualSlide::new(id, img, cfg.base_um_per_px, annotations)
}

/// Color detector for tumor brown, tagged with the objective.
pub fn tumor_detector(objective: ObjectiveName) -> NetGraph {
    build_color_detector(TUMOR_BROWN, DETECTOR_TOLERANCE)
        .expect("positive tolerance")
        .with_objective_tag(objective.tag())
}

/// Captures and debayers one FOV the way the pipeline does.
pub fn capture_rgb(slide: &Arc<VirtualSlide>, pose: StagePose, objective: ObjectiveName, fov_px: usize) -> Result<Tensor> {
    let mut session = ScopeSession::new(slide.clone(), Arc::new(ModelRegistry::new()), fov_px)?;
    session.set_objective(objective);
    session.set_pose(pose, false)?;
    debayer(&session.capture()?.raw_mosaic)
}

/// True if any annotation of class `label` covers a pixel of the FOV footprint.
fn fov_touches(slide: &VirtualSlide, pose: StagePose, objective: &Objective, fov_px: usize, label: TissueClass) -> bool {
    let half = fov_px as f64 * objective.um_per_px / 2.0 / slide.base_um_per_px();
    let (cx, cy) = (pose.x_um / slide.base_um_per_px(), pose.y_um / slide.base_um_per_px());
    slide.annotations().iter().filter(|a| a.label == label).any(|a| {
        a.polygon
            .iter()
            .any(|p| (p[0] - cx).abs() <= half && (p[1] - cy).abs() <= half)
            || a.contains(cx, cy)
    })
}

/// Writes `slides/`, `models/`, `nets/`, `fovs/` and `manifest.csv` under `out`.
pub fn generate(out: &Path, cfg: &DemoConfig) -> Result<DemoSummary> {
    let slides_dir = out.join("slides");
    let models_dir = out.join("models");
    let nets_dir = out.join("nets");
    let fovs_dir = out.join("fovs");
    for d in [&slides_dir, &models_dir, &nets_dir, &fovs_dir] {
        fs::create_dir_all(d)?;
    }

    for name in MODEL_OBJECTIVES {
        tumor_detector(name).save(&models_dir.join(format!("detector_{}.json", name.tag())))?;
    }
    build_mini_inception(cfg.seed)
        .with_objective_tag("bench")
        .save(&models_dir.join("bench_mini_inception.json"))?;
    build_mini_inception(cfg.seed).save(&nets_dir.join("mini_inception.json"))?;
    build_mini_inception_naive(cfg.seed).save(&nets_dir.join("mini_inception_naive.json"))?;

    let objective = Objective::standard(cfg.fov_objective);
    let clear_px = cfg.fov_px as f64 * objective.um_per_px / cfg.base_um_per_px;
    let detector = tumor_detector(cfg.fov_objective);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut slide_ids = Vec::new();
    let mut rows = Vec::new();
    let mut family_count = std::collections::HashMap::new();
    for family in &cfg.families {
        let k = family_count.entry(family.name()).or_insert(0usize);
        *k += 1;
        let id = format!("{}-{}", family.name(), k);
        let slide = Arc::new(synth_slide(&id, *family, cfg, clear_px, &mut rng)?);
        slide.save(&slides_dir)?;
        for (i, ann) in slide.annotations().iter().enumerate() {
            let [x, y] = ann.centroid();
            let pose = StagePose::new(x * cfg.base_um_per_px, y * cfg.base_um_per_px);
            let rgb = capture_rgb(&slide, pose, cfg.fov_objective, cfg.fov_px)?;
            let fov_id = format!("{id}-{i:02}");
            let image = format!("fovs/{fov_id}.png");
            save_rgb_png(&rgb, &out.join(&image))?;
            // Score what was written so rescoring the PNG reproduces the manifest.
            let rgb = load_rgb_png(&out.join(&image))?;
            let label = if fov_touches(&slide, pose, &objective, cfg.fov_px, TissueClass::Tumor) {
                TissueClass::Tumor
            } else {
                TissueClass::Benign
            };
            let score = fov_likelihood(&run_fcn(&detector, &rgb)?).expect("heatmap is non-empty");
            rows.push(ManifestRow {
                fov_id,
                label,
                score: Some(score),
                image: Some(image),
            });
        }
        slide_ids.push(id);
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &rows).map_err(|e| ScopeError::Meta(e.to_string()))?;
    Ok(DemoSummary {
        slides_dir,
        models_dir,
        nets_dir,
        manifest,
        slide_ids,
        rows,
    })
}
