//! Layer graphs: representation, validation, weight storage and the
//! receptive-field arithmetic that ties a network's output grid to input pixels.

mod builders;
mod geometry;
mod io;
mod weights;

pub use builders::{
    build_color_detector, build_mini_inception, build_mini_inception_naive, build_paper_scale_inception,
    random_fcn_graph, BlockConfig, MiniInceptionConfig, NAIVE_TILE_CELLS,
};
pub use geometry::{count_flops, count_sliding_flops, Footprint, GridGeometry};
pub use io::{load_graph, weights_path_for, GRAPH_FORMAT, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use weights::{WeightEntry, WeightStore};

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Activation, ConvKernel, HeadKind, Padding, TensorError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported graph format {0:?}")]
    Format(String),
    #[error("bad weights header: {0}")]
    WeightsHeader(String),
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
    #[error("layer {layer:?} references undeclared input {input:?}")]
    DanglingInput { layer: String, input: String },
    #[error("cycle detected through layer {0:?}")]
    Cycle(String),
    #[error("layer {layer:?} expects {expected} inputs, got {actual}")]
    Arity {
        layer: String,
        expected: &'static str,
        actual: usize,
    },
    #[error("graph must have exactly one input node, found {0}")]
    InputCount(usize),
    #[error("graph must have exactly one output node, found {0:?}")]
    OutputCount(Vec<String>),
    #[error("layer {layer:?}: expected {expected} input channels, got {actual}")]
    Channels {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("weight {0:?} missing from store")]
    MissingWeight(String),
    #[error("shape mismatch for {name:?}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("graph is not FCN-safe: {0:?}")]
    NotFcnSafe(Vec<Violation>),
    #[error("input {actual} px smaller than canonical patch {required} px")]
    InputTooSmall { required: usize, actual: usize },
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Input {
        channels: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    AffineAct {
        channels: usize,
        #[serde(default)]
        activation: Activation,
    },
    Concat,
    Crop {
        k: usize,
    },
    LikelihoodHead {
        head: HeadKind,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Why a graph cannot be run fully-convolutionally without changing its
/// output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ViolationRule {
    SamePadding,
    BranchStrideMismatch { strides: Vec<usize> },
    /// `balancing_crops` is present when symmetric crops can equalize the
    /// branches: one crop width per input, in input order.
    BranchExtentMismatch {
        extents: Vec<usize>,
        balancing_crops: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: String,
    #[serde(flatten)]
    pub rule: ViolationRule,
}

/// Executable form of a layer: resolved input indices and weights.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input,
    Conv {
        kernel: ConvKernel,
        bias: Vec<f32>,
        stride: usize,
        padding: Padding,
    },
    Pool {
        kind: crate::tensor::PoolKind,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Affine {
        scale: Vec<f32>,
        shift: Vec<f32>,
        activation: Activation,
    },
    Concat,
    Crop(usize),
    Head(HeadKind),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub channels: usize,
}

/// A validated, immutable network: topologically ordered layers plus weights.
#[derive(Debug, Clone)]
pub struct NetGraph {
    name: String,
    objective_tag: String,
    input_channels: usize,
    training_patch_px: Option<usize>,
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    nodes: Vec<Node>,
    footprints: Vec<Footprint>,
    violations: Vec<Violation>,
}

impl NetGraph {
    /// Validates and compiles a graph. Layers may be given in any order; they
    /// are stored topologically sorted.
    pub fn new(
        name: impl Into<String>,
        objective_tag: impl Into<String>,
        input_channels: usize,
        layers: Vec<LayerSpec>,
        weights: WeightStore,
    ) -> Result<Self> {
        let layers = topo_sort(layers)?;
        let nodes = compile(&layers, &weights, input_channels)?;
        let (footprints, violations) = geometry::analyze(&layers, &nodes);
        Ok(Self {
            name: name.into(),
            objective_tag: objective_tag.into(),
            input_channels,
            training_patch_px: None,
            layers,
            weights,
            nodes,
            footprints,
            violations,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn objective_tag(&self) -> &str {
        &self.objective_tag
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output_channels(&self) -> usize {
        self.nodes.last().map(|n| n.channels).unwrap_or(0)
    }

    /// Input size the network was trained on. Defaults to the support extent
    /// of the output node (the canonical patch for FCN-safe graphs).
    pub fn training_patch_px(&self) -> usize {
        self.training_patch_px.unwrap_or_else(|| self.output_footprint().extent)
    }

    pub fn declared_training_patch_px(&self) -> Option<usize> {
        self.training_patch_px
    }

    pub fn with_training_patch(mut self, px: Option<usize>) -> Self {
        self.training_patch_px = px;
        self
    }

    pub fn with_objective_tag(mut self, tag: impl Into<String>) -> Self {
        self.objective_tag = tag.into();
        self
    }

    /// Per-layer footprint, in topological order.
    pub fn footprints(&self) -> &[Footprint] {
        &self.footprints
    }

    pub fn output_footprint(&self) -> Footprint {
        *self.footprints.last().expect("graph has an output")
    }

    /// FCN-safety violations; empty iff every conv and pool is valid-padded and every
    /// concat merges inputs of identical stride and extent.
    pub fn validate_fcn_safe(&self) -> Vec<Violation> {
        self.violations.clone()
    }

    pub fn is_fcn_safe(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        if !self.violations.is_empty() {
            return Err(GraphError::NotFcnSafe(self.violations.clone()));
        }
        Ok(self.output_footprint().geometry())
    }

    /// Spatial output length for an input of `n` px, if the input is large
    /// enough. Valid for every graph, including same-padded ones.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        self.output_footprint().output_len(n)
    }

    /// Rebuilds the graph with one conv or pool layer's padding replaced.
    pub fn with_padding(&self, layer: &str, padding: Padding) -> Result<NetGraph> {
        let mut layers = self.layers.clone();
        let spec = layers
            .iter_mut()
            .find(|l| l.name == layer)
            .ok_or_else(|| GraphError::UnknownLayer(layer.to_string()))?;
        match &mut spec.kind {
            LayerKind::Conv { padding: p, .. }
            | LayerKind::MaxPool { padding: p, .. }
            | LayerKind::AvgPool { padding: p, .. } => *p = padding,
            _ => return Err(GraphError::UnknownLayer(format!("{layer} has no padding"))),
        }
        Ok(NetGraph::new(
            self.name.clone(),
            self.objective_tag.clone(),
            self.input_channels,
            layers,
            self.weights.clone(),
        )?
        .with_training_patch(self.training_patch_px))
    }

    /// Same topology with a different weight store.
    pub fn with_weights(&self, weights: WeightStore) -> Result<NetGraph> {
        Ok(NetGraph::new(
            self.name.clone(),
            self.objective_tag.clone(),
            self.input_channels,
            self.layers.clone(),
            weights,
        )?
        .with_training_patch(self.training_patch_px))
    }

    /// Layer names, kinds and wiring, ignoring weights.
    pub fn topology_signature(&self) -> Vec<(String, LayerKind, Vec<String>)> {
        self.layers
            .iter()
            .map(|l| (l.name.clone(), l.kind.clone(), l.inputs.clone()))
            .collect()
    }
}

fn topo_sort(layers: Vec<LayerSpec>) -> Result<Vec<LayerSpec>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in layers.iter().enumerate() {
        if index.insert(l.name.as_str(), i).is_some() {
            return Err(GraphError::DuplicateName(l.name.clone()));
        }
    }
    let n = layers.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, l) in layers.iter().enumerate() {
        for input in &l.inputs {
            let &src = index.get(input.as_str()).ok_or_else(|| GraphError::DanglingInput {
                layer: l.name.clone(),
                input: input.clone(),
            })?;
            indegree[i] += 1;
            consumers[src].push(i);
        }
    }

    let inputs: Vec<usize> = (0..n).filter(|&i| matches!(layers[i].kind, LayerKind::Input { .. })).collect();
    if inputs.len() != 1 {
        return Err(GraphError::InputCount(inputs.len()));
    }
    let outputs: Vec<String> = (0..n)
        .filter(|&i| consumers[i].is_empty())
        .map(|i| layers[i].name.clone())
        .collect();
    if outputs.len() != 1 {
        return Err(GraphError::OutputCount(outputs));
    }

    // Kahn's algorithm, ties broken by declaration order.
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).expect("cycle member");
        return Err(GraphError::Cycle(layers[stuck].name.clone()));
    }
    let mut slots: Vec<Option<LayerSpec>> = layers.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().expect("each once")).collect())
}

fn compile(layers: &[LayerSpec], weights: &WeightStore, input_channels: usize) -> Result<Vec<Node>> {
    let index: HashMap<&str, usize> = layers.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
    let mut nodes: Vec<Node> = Vec::with_capacity(layers.len());
    for l in layers {
        let inputs: Vec<usize> = l.inputs.iter().map(|s| index[s.as_str()]).collect();
        let arity_ok = match l.kind {
            LayerKind::Input { .. } => inputs.is_empty(),
            LayerKind::Concat => inputs.len() >= 2,
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            let expected = match l.kind {
                LayerKind::Input { .. } => "0",
                LayerKind::Concat => ">=2",
                _ => "1",
            };
            return Err(GraphError::Arity {
                layer: l.name.clone(),
                expected,
                actual: inputs.len(),
            });
        }
        let in_ch = inputs.first().map(|&i| nodes[i].channels).unwrap_or(0);
        let check_channels = |expected: usize| -> Result<()> {
            if expected != in_ch {
                return Err(GraphError::Channels {
                    layer: l.name.clone(),
                    expected,
                    actual: in_ch,
                });
            }
            Ok(())
        };
        let (op, channels) = match &l.kind {
            LayerKind::Input { channels } => {
                if *channels != input_channels {
                    return Err(GraphError::Channels {
                        layer: l.name.clone(),
                        expected: input_channels,
                        actual: *channels,
                    });
                }
                (Op::Input, *channels)
            }
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                check_channels(*in_channels)?;
                if *stride == 0 || *kernel == 0 {
                    return Err(GraphError::ShapeMismatch {
                        name: l.name.clone(),
                        detail: "kernel and stride must be positive".into(),
                    });
                }
                let w = weights.expect(
                    &format!("{}.weight", l.name),
                    &[*out_channels, *in_channels, *kernel, *kernel],
                )?;
                let b = weights.expect(&format!("{}.bias", l.name), &[*out_channels])?;
                let kernel = ConvKernel::new(*out_channels, *in_channels, *kernel, *kernel, w.to_vec())?;
                (
                    Op::Conv {
                        kernel,
                        bias: b.to_vec(),
                        stride: *stride,
                        padding: *padding,
                    },
                    *out_channels,
                )
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            }
            | LayerKind::AvgPool {
                kernel,
                stride,
                padding,
            } => {
                if *stride == 0 || *kernel == 0 {
                    return Err(GraphError::ShapeMismatch {
                        name: l.name.clone(),
                        detail: "kernel and stride must be positive".into(),
                    });
                }
                let kind = if matches!(l.kind, LayerKind::MaxPool { .. }) {
                    crate::tensor::PoolKind::Max
                } else {
                    crate::tensor::PoolKind::Avg
                };
                (
                    Op::Pool {
                        kind,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    },
                    in_ch,
                )
            }
            LayerKind::AffineAct { channels, activation } => {
                check_channels(*channels)?;
                let scale = weights.expect(&format!("{}.scale", l.name), &[*channels])?;
                let shift = weights.expect(&format!("{}.shift", l.name), &[*channels])?;
                (
                    Op::Affine {
                        scale: scale.to_vec(),
                        shift: shift.to_vec(),
                        activation: *activation,
                    },
                    *channels,
                )
            }
            LayerKind::Concat => (Op::Concat, inputs.iter().map(|&i| nodes[i].channels).sum()),
            LayerKind::Crop { k } => (Op::Crop(*k), in_ch),
            LayerKind::LikelihoodHead { head } => (Op::Head(*head), in_ch),
        };
        nodes.push(Node { op, inputs, channels });
    }
    Ok(nodes)
}
