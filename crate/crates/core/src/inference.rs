//! Graph execution: single-pass fully-convolutional mode, patch-by-patch
//! sliding-window mode, tiled execution at the training patch size, and the
//! consistency checks between them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{GraphError, GridGeometry, NetGraph, Op, Violation};
use crate::tensor::{self, Padding, Tensor, TensorError};

/// Absolute tolerance for treating two execution modes as equivalent.
pub const EQUIVALENCE_TOL: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("graph is not FCN-safe: {0:?}")]
    Unsafe(Vec<Violation>),
    #[error("FOV {height}x{width} px smaller than required {required} px")]
    FovTooSmall {
        required: usize,
        height: usize,
        width: usize,
    },
    #[error("FOV has {actual} channels, graph expects {expected}")]
    Channels { expected: usize, actual: usize },
    #[error("stride {stride} is not a positive multiple of the output stride {output_stride}")]
    Stride { stride: usize, output_stride: usize },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("sidecar error: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Likelihood grid registered to FOV pixels through its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    geometry: GridGeometry,
    source_fov_seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    source_fov_seq: u64,
    geometry: GridGeometry,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>, geometry: GridGeometry) -> Self {
        assert_eq!(rows * cols, values.len(), "heatmap dims");
        Self {
            rows,
            cols,
            values,
            geometry,
            source_fov_seq: 0,
        }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.source_fov_seq = seq;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn source_fov_seq(&self) -> u64 {
        self.source_fov_seq
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// FOV pixel coordinates `(y, x)` of the window center behind a cell.
    pub fn cell_center_px(&self, row: usize, col: usize) -> (f64, f64) {
        (self.geometry.cell_center_px(row), self.geometry.cell_center_px(col))
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.rows, self.cols, 1, self.values.clone()).expect("dims checked")
    }

    /// Writes a 16-bit grayscale PNG (value × 65535) and a JSON geometry
    /// sidecar at the same stem. Returns the sidecar path.
    pub fn save(&self, png_path: &Path) -> Result<PathBuf> {
        let px: Vec<u16> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.cols as u32, self.rows as u32, px)
            .expect("buffer sized to dims");
        img.save_with_format(png_path, image::ImageFormat::Png)
            .map_err(|e| InferenceError::Image(e.to_string()))?;
        let sidecar = png_path.with_extension("json");
        let meta = Sidecar {
            rows: self.rows,
            cols: self.cols,
            source_fov_seq: self.source_fov_seq,
            geometry: self.geometry,
        };
        fs::write(&sidecar, serde_json::to_string_pretty(&meta).expect("sidecar serializes"))?;
        Ok(sidecar)
    }

    /// Reads a heatmap written by [`Heatmap::save`]; values are quantized to
    /// 1/65535.
    pub fn load(png_path: &Path) -> Result<Heatmap> {
        let meta: Sidecar = serde_json::from_str(&fs::read_to_string(png_path.with_extension("json"))?)
            .map_err(|e| InferenceError::Sidecar(e.to_string()))?;
        let img = image::open(png_path)
            .map_err(|e| InferenceError::Image(e.to_string()))?
            .into_luma16();
        if (img.width() as usize, img.height() as usize) != (meta.cols, meta.rows) {
            return Err(InferenceError::Sidecar("image size disagrees with sidecar".into()));
        }
        let values = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
        Ok(Heatmap::new(meta.rows, meta.cols, values, meta.geometry).with_seq(meta.source_fov_seq))
    }
}

/// Runs every layer on `input` and returns the output node's tensor.
/// Intermediate tensors are dropped after their last consumer.
pub fn forward(g: &NetGraph, input: &Tensor) -> Result<Tensor> {
    if input.channels() != g.input_channels() {
        return Err(InferenceError::Channels {
            expected: g.input_channels(),
            actual: input.channels(),
        });
    }
    let nodes = g.nodes();
    let mut last_use = vec![0usize; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for &src in &n.inputs {
            last_use[src] = i;
        }
    }
    let mut vals: Vec<Option<Tensor>> = vec![None; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let arg = |k: usize| vals[node.inputs[k]].as_ref().expect("inputs computed first");
        let out = match &node.op {
            Op::Input => input.clone(),
            Op::Conv {
                kernel,
                bias,
                stride,
                padding,
            } => tensor::conv2d(arg(0), kernel, bias, *stride, *padding)?,
            Op::Pool {
                kind,
                kernel,
                stride,
                padding,
            } => tensor::pool2d(arg(0), *kind, *kernel, *stride, *padding)?,
            Op::Affine {
                scale,
                shift,
                activation,
            } => tensor::affine_act(arg(0), scale, shift, *activation)?,
            Op::Concat => {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&s| vals[s].as_ref().expect("computed")).collect();
                tensor::concat_channels(&ins)?
            }
            Op::Crop(k) => tensor::crop_border(arg(0), *k)?,
            Op::Head(kind) => tensor::likelihood_head(arg(0), *kind),
        };
        for &src in &node.inputs {
            if last_use[src] == i {
                vals[src] = None;
            }
        }
        vals[i] = Some(out);
    }
    Ok(vals.pop().flatten().expect("graph has an output"))
}

fn last_channel(t: &Tensor) -> Vec<f32> {
    t.channel(t.channels() - 1).into_data()
}

fn check_fov(g: &NetGraph, fov: &Tensor, required: usize) -> Result<()> {
    if fov.height() < required || fov.width() < required {
        return Err(InferenceError::FovTooSmall {
            required,
            height: fov.height(),
            width: fov.width(),
        });
    }
    if fov.channels() != g.input_channels() {
        return Err(InferenceError::Channels {
            expected: g.input_channels(),
            actual: fov.channels(),
        });
    }
    Ok(())
}

/// Single forward pass over the whole FOV. The graph must be FCN-safe.
pub fn run_fcn(g: &NetGraph, fov: &Tensor) -> Result<Heatmap> {
    if !g.is_fcn_safe() {
        return Err(InferenceError::Unsafe(g.validate_fcn_safe()));
    }
    run_full_frame(g, fov)
}

/// Single forward pass over the whole FOV without the safety check, the way a
/// patch-trained network is naively applied to a large image. The geometry is
/// the graph's output footprint and is only meaningful for FCN-safe graphs.
pub fn run_full_frame(g: &NetGraph, fov: &Tensor) -> Result<Heatmap> {
    let fp = g.output_footprint();
    check_fov(g, fov, fp.extent)?;
    let out = forward(g, fov)?;
    Ok(Heatmap::new(out.height(), out.width(), last_channel(&out), fp.geometry()))
}

/// Runs the network on every canonical patch at `stride` (default: the output
/// stride) and places each 1x1 result into the grid.
pub fn run_sliding_window(g: &NetGraph, fov: &Tensor, stride: Option<usize>) -> Result<Heatmap> {
    let fp = g.output_footprint();
    let stride = stride.unwrap_or(fp.stride);
    if stride == 0 || stride % fp.stride != 0 {
        return Err(InferenceError::Stride {
            stride,
            output_stride: fp.stride,
        });
    }
    let p = fp.extent;
    check_fov(g, fov, p)?;
    let rows = (fov.height() - p) / stride + 1;
    let cols = (fov.width() - p) / stride + 1;
    let values = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let patch = fov.region(r * stride, c * stride, p, p)?;
            let out = forward(g, &patch)?;
            Ok(out.get(0, 0, out.channels() - 1))
        })
        .collect::<Result<Vec<f32>>>()?;
    Ok(Heatmap::new(rows, cols, values, fp.geometry().with_stride(stride)))
}

/// Number of canonical patches a sliding-window pass evaluates.
pub fn sliding_patch_count(g: &NetGraph, fov_px: usize, stride: usize) -> Option<usize> {
    let p = g.output_footprint().extent;
    (fov_px >= p && stride > 0).then(|| ((fov_px - p) / stride + 1).pow(2))
}

fn tile_starts(cells: usize, block: usize) -> Vec<usize> {
    if cells <= block {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..cells - block).step_by(block).collect();
    v.push(cells - block);
    v
}

/// Runs the network on `tile_px` tiles laid out so their output blocks cover
/// the full-frame grid without gaps; the last row and column of tiles are
/// shifted inwards to stay inside the FOV. With `tile_px` equal to the
/// canonical patch this is the sliding window at the output stride.
pub fn run_tiled(g: &NetGraph, fov: &Tensor, tile_px: usize) -> Result<Heatmap> {
    let fp = g.output_footprint();
    let block = fp.output_len(tile_px).ok_or(InferenceError::FovTooSmall {
        required: fp.extent,
        height: tile_px,
        width: tile_px,
    })?;
    check_fov(g, fov, tile_px)?;
    let rows = fp.output_len(fov.height()).expect("fov >= tile");
    let cols = fp.output_len(fov.width()).expect("fov >= tile");
    let (ry, rx) = (tile_starts(rows, block), tile_starts(cols, block));
    let tiles: Vec<(usize, usize)> = ry.iter().flat_map(|&y| rx.iter().map(move |&x| (y, x))).collect();
    let outs = tiles
        .par_iter()
        .map(|&(cy, cx)| {
            let patch = fov.region(cy * fp.stride, cx * fp.stride, tile_px, tile_px)?;
            Ok(last_channel(&forward(g, &patch)?))
        })
        .collect::<Result<Vec<Vec<f32>>>>()?;
    let mut values = vec![0.0f32; rows * cols];
    let bh = block.min(rows);
    let bw = block.min(cols);
    for (&(cy, cx), out) in tiles.iter().zip(&outs) {
        for r in 0..bh {
            let dst = (cy + r) * cols + cx;
            values[dst..dst + bw].copy_from_slice(&out[r * block..r * block + bw]);
        }
    }
    Ok(Heatmap::new(rows, cols, values, fp.geometry()))
}

/// `|full frame - tiled at the training patch|` per grid cell, as a one-channel
/// tensor. Zero for FCN-safe graphs; for same-padded graphs the nonzero cells
/// repeat with the training-patch tiling.
pub fn artifact_map(g: &NetGraph, fov: &Tensor) -> Result<Tensor> {
    let full = run_full_frame(g, fov)?;
    let tiled = run_tiled(g, fov, g.training_patch_px())?;
    let diff = full
        .values()
        .iter()
        .zip(tiled.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(Tensor::new(full.rows(), full.cols(), 1, diff)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub fov_side: usize,
    pub max_abs_diff: f32,
    pub pass: bool,
}

/// Compares full-frame execution against patch execution at the graph's
/// training patch on `trials` seeded uniform-random FOVs.
pub fn check_equivalence(g: &NetGraph, fov_side: usize, trials: usize, seed: u64) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(InferenceError::NoTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_diff = 0.0f32;
    for _ in 0..trials {
        let fov = Tensor::from_fn(fov_side, fov_side, g.input_channels(), |_, _, _| rng.random::<f32>());
        let d = artifact_map(g, &fov)?;
        let m = d.data().iter().copied().fold(0.0f32, f32::max);
        if m.is_nan() {
            max_abs_diff = f32::NAN;
        } else {
            max_abs_diff = max_abs_diff.max(m);
        }
    }
    Ok(EquivalenceReport {
        trials,
        fov_side,
        max_abs_diff,
        pass: max_abs_diff <= EQUIVALENCE_TOL,
    })
}

/// Whether any conv or pool in the graph zero-pads its input.
pub fn uses_same_padding(g: &NetGraph) -> bool {
    g.nodes().iter().any(|n| {
        matches!(
            n.op,
            Op::Conv {
                padding: Padding::Same,
                ..
            } | Op::Pool {
                padding: Padding::Same,
                ..
            }
        )
    })
}
