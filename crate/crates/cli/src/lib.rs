//! Command implementations behind the `arm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use arm_core::evalkit::{
    auc, bootstrap_ci, color_summary, density_histogram, fov_likelihood, operating_points_with_ci,
    pick_operating_points, read_manifest, roc_curve, scored, write_colors_csv, write_density_hist_csv,
    write_metrics_csv, write_roc_csv, ColorRow, LabeledFov, OperatingPoint, RocCurve,
};
use arm_core::inference::{check_equivalence, run_fcn, EquivalenceReport};
use arm_core::netgraph::load_graph;
use arm_core::pipeline::{bench, paired_configs, write_bench_csv, BenchRow};
use arm_core::scope::demo::{generate, DemoConfig, DemoSummary};
use arm_core::scope::{list_slides, load_rgb_png, ModelRegistry, ScopeSession, VirtualSlide};

/// Registry tag of the model `bench` runs when present.
pub const BENCH_MODEL_TAG: &str = "bench";

pub fn make_demo(out: &Path, seed: u64) -> Result<DemoSummary> {
    let cfg = DemoConfig {
        seed,
        ..DemoConfig::default()
    };
    generate(out, &cfg).with_context(|| format!("generating demo in {}", out.display()))
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub slides: PathBuf,
    pub models: PathBuf,
    pub slide_id: Option<String>,
    pub fov_px: usize,
    pub reps: usize,
    pub frames: u64,
    pub out: Option<PathBuf>,
}

/// Runs the four sequential/pipelined x sliding/FCN configurations on one
/// slide. The `bench` model is used when registered, else the 10X model.
pub fn run_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let registry = Arc::new(ModelRegistry::load_dir(&args.models)?);
    let slide_id = match &args.slide_id {
        Some(id) => id.clone(),
        None => list_slides(&args.slides)?.first().map(|m| m.id.clone()).context("no slides found")?,
    };
    let slide = Arc::new(VirtualSlide::load(&args.slides, &slide_id)?);
    let model = registry.by_tag(BENCH_MODEL_TAG);
    let make = || {
        let mut s = ScopeSession::new(slide.clone(), registry.clone(), args.fov_px)?;
        if let Some(m) = &model {
            s.set_model(Some(m.clone()));
        }
        Ok(s)
    };
    if make()?.model().is_none() {
        bail!("no model for the bench: register one tagged {BENCH_MODEL_TAG:?} or 10X");
    }
    let rows = bench(&paired_configs(args.fov_px), make, args.reps, args.frames)?;
    if let Some(out) = &args.out {
        write_bench_csv(out, &rows).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(rows)
}

pub fn check(model: &Path, fov_side: usize, trials: usize, seed: u64) -> Result<EquivalenceReport> {
    let g = load_graph(model, None).with_context(|| format!("loading {}", model.display()))?;
    Ok(check_equivalence(&g, fov_side, trials, seed)?)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub fovs: Vec<LabeledFov>,
    pub roc: RocCurve,
    pub auc_ci: Option<(f64, f64)>,
    pub points: [OperatingPoint; 3],
}

/// Scores the manifest (running `model` on rows without a score), then writes
/// `roc.csv` and `metrics.csv` into `out`. `bootstrap == 0` skips intervals.
pub fn eval(manifest: &Path, out: &Path, model: Option<&Path>, bootstrap: usize, seed: u64) -> Result<EvalReport> {
    let rows = read_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let graph = model.map(|m| load_graph(m, None)).transpose()?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut fovs = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut row = row.clone();
        if let (Some(g), Some(image)) = (&graph, &row.image) {
            if row.score.is_none() {
                let rgb = load_rgb_png(&base.join(image))?;
                row.score = Some(fov_likelihood(&run_fcn(g, &rgb)?)?);
            }
        }
        fovs.push(row.to_labeled(i + 1)?);
    }
    let data = scored(&fovs);
    let roc = roc_curve(&data)?;
    let (points, auc_ci) = if bootstrap > 0 {
        let ci = bootstrap_ci(&data, auc, bootstrap, seed)?;
        (operating_points_with_ci(&data, bootstrap, seed)?, Some((ci.lo, ci.hi)))
    } else {
        (pick_operating_points(&data)?, None)
    };
    fs::create_dir_all(out)?;
    write_roc_csv(&out.join("roc.csv"), &roc)?;
    write_metrics_csv(&out.join("metrics.csv"), &points, Some((roc.auc, auc_ci)))?;
    Ok(EvalReport {
        fovs,
        roc,
        auc_ci,
        points,
    })
}

pub const DENSITY_BINS: usize = 32;
pub const DENSITY_MAX: f64 = 2.0;

/// Writes per-slide HSD rows to `out` and density histograms next to it as
/// `density_hist.csv`.
pub fn colors(slides: &Path, out: &Path) -> Result<Vec<ColorRow>> {
    let mut images = Vec::new();
    for meta in list_slides(slides)? {
        let slide = VirtualSlide::load(slides, &meta.id)?;
        images.push((meta.id, slide.image().clone()));
    }
    let rows = color_summary(images.iter().map(|(id, t)| (id.as_str(), t)));
    let bins: Vec<_> = images
        .iter()
        .flat_map(|(id, t)| density_histogram(id, t, DENSITY_BINS, DENSITY_MAX))
        .collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_colors_csv(out, &rows)?;
    write_density_hist_csv(&out.with_file_name("density_hist.csv"), &bins)?;
    Ok(rows)
}
