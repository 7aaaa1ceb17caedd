//! Programmatic network constructors: the mini-Inception family, the
//! hand-built color detector used by the demo, and random FCN-safe graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GraphError, LayerKind, LayerSpec, NetGraph, Result, WeightStore};
use crate::tensor::{Activation, HeadKind, Padding};

struct Builder {
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    channels: std::collections::HashMap<String, usize>,
    rng: ChaCha8Rng,
    positive: bool,
}

impl Builder {
    fn new(seed: u64, input_channels: usize, positive: bool) -> Self {
        let mut b = Self {
            layers: Vec::new(),
            weights: WeightStore::default(),
            channels: Default::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            positive,
        };
        b.push("input", LayerKind::Input { channels: input_channels }, &[], input_channels);
        b
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: &[&str], channels: usize) -> String {
        self.layers.push(LayerSpec::new(name, kind, inputs));
        self.channels.insert(name.to_string(), channels);
        name.to_string()
    }

    fn draw(&mut self, n: usize, bound: f32) -> Vec<f32> {
        if self.positive {
            (0..n).map(|_| self.rng.random_range(0.05f32..1.0) * bound).collect()
        } else {
            (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
        }
    }

    fn conv(&mut self, name: &str, from: &str, out: usize, k: usize, stride: usize, padding: Padding) -> String {
        self.conv_gain(name, from, out, k, stride, padding, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_gain(
        &mut self,
        name: &str,
        from: &str,
        out: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        gain: f32,
    ) -> String {
        let ic = self.channels[from];
        let bound = gain * (6.0 / (ic * k * k) as f32).sqrt();
        let w = self.draw(out * ic * k * k, bound);
        let b = self.draw(out, 0.1);
        self.weights.insert(format!("{name}.weight"), vec![out, ic, k, k], w);
        self.weights.insert(format!("{name}.bias"), vec![out], b);
        self.push(
            name,
            LayerKind::Conv {
                in_channels: ic,
                out_channels: out,
                kernel: k,
                stride,
                padding,
            },
            &[from],
            out,
        )
    }

    fn affine(&mut self, name: &str, from: &str, activation: Activation) -> String {
        let c = self.channels[from];
        let scale = (0..c).map(|_| self.rng.random_range(0.8f32..1.2)).collect();
        let shift = self.draw(c, 0.1);
        self.weights.insert(format!("{name}.scale"), vec![c], scale);
        self.weights.insert(format!("{name}.shift"), vec![c], shift);
        self.push(name, LayerKind::AffineAct { channels: c, activation }, &[from], c)
    }

    fn conv_relu(&mut self, name: &str, from: &str, out: usize, k: usize, padding: Padding) -> String {
        let c = self.conv(name, from, out, k, 1, padding);
        self.affine(&format!("{name}_bn"), &c, Activation::Relu)
    }

    fn pool(&mut self, name: &str, from: &str, max: bool, k: usize, stride: usize, padding: Padding) -> String {
        let c = self.channels[from];
        let kind = if max {
            LayerKind::MaxPool {
                kernel: k,
                stride,
                padding,
            }
        } else {
            LayerKind::AvgPool {
                kernel: k,
                stride,
                padding,
            }
        };
        self.push(name, kind, &[from], c)
    }

    fn crop(&mut self, name: &str, from: &str, k: usize) -> String {
        if k == 0 {
            return from.to_string();
        }
        let c = self.channels[from];
        self.push(name, LayerKind::Crop { k }, &[from], c)
    }

    fn concat(&mut self, name: &str, from: &[&str]) -> String {
        let c = from.iter().map(|f| self.channels[*f]).sum();
        self.push(name, LayerKind::Concat, from, c)
    }

    /// Four-branch block: 1x1 | 1x1-3x3 | 1x1-3x3-3x3 | avgpool3-1x1. Valid
    /// blocks center-crop each branch to the deepest branch's extent before
    /// concatenation; same-padded blocks keep every branch at full size and
    /// need no crops.
    fn inception_block(&mut self, prefix: &str, from: &str, width: usize, padding: Padding) -> String {
        let crop = |b: &mut Self, name: &str, x: &str, k: usize| match padding {
            Padding::Valid => b.crop(name, x, k),
            Padding::Same => x.to_string(),
        };
        let a = self.conv_relu(&format!("{prefix}_b0_1x1"), from, width, 1, Padding::Valid);
        let a = crop(self, &format!("{prefix}_b0_crop"), &a, 2);

        let b = self.conv_relu(&format!("{prefix}_b1_1x1"), from, width, 1, Padding::Valid);
        let b = self.conv_relu(&format!("{prefix}_b1_3x3"), &b, width, 3, padding);
        let b = crop(self, &format!("{prefix}_b1_crop"), &b, 1);

        let c = self.conv_relu(&format!("{prefix}_b2_1x1"), from, width, 1, Padding::Valid);
        let c = self.conv_relu(&format!("{prefix}_b2_3x3a"), &c, width, 3, padding);
        let c = self.conv_relu(&format!("{prefix}_b2_3x3b"), &c, width, 3, padding);

        let d = self.pool(&format!("{prefix}_b3_pool"), from, false, 3, 1, padding);
        let d = self.conv_relu(&format!("{prefix}_b3_1x1"), &d, width, 1, Padding::Valid);
        let d = crop(self, &format!("{prefix}_b3_crop"), &d, 1);

        self.concat(&format!("{prefix}_concat"), &[&a, &b, &c, &d])
    }

    fn finish(self, name: &str, tag: &str, input_channels: usize) -> Result<NetGraph> {
        NetGraph::new(name, tag, input_channels, self.layers, self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub branch_width: usize,
    pub repeats: usize,
}

/// Shape of a mini-Inception network: a valid stem conv, then stages of
/// (2x2/2 max-pool, `repeats` inception blocks), then a valid head conv and a
/// softmax likelihood head.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniInceptionConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stages: Vec<BlockConfig>,
    pub head_kernel: usize,
    pub classes: usize,
    /// Scale of the final conv's weight range relative to He-uniform; larger
    /// values spread likelihoods away from the uniform prior.
    pub logit_gain: f32,
}

impl Default for MiniInceptionConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stem_channels: 8,
            stem_kernel: 3,
            stages: vec![
                BlockConfig {
                    branch_width: 4,
                    repeats: 1,
                },
                BlockConfig {
                    branch_width: 6,
                    repeats: 1,
                },
            ],
            head_kernel: 1,
            classes: 2,
            logit_gain: 1.0,
        }
    }
}

impl MiniInceptionConfig {
    /// Canonical-patch/stride profile used for compute accounting at
    /// full sensor scale: 911 px patches at output stride 32.
    pub fn paper_scale() -> Self {
        Self {
            input_channels: 3,
            stem_channels: 4,
            stem_kernel: 8,
            stages: vec![
                BlockConfig {
                    branch_width: 2,
                    repeats: 3,
                };
                5
            ],
            head_kernel: 5,
            classes: 2,
            logit_gain: 1.0,
        }
    }

    pub fn build(&self, seed: u64, name: &str) -> Result<NetGraph> {
        self.build_with_padding(seed, name, Padding::Valid)
    }

    /// With `Padding::Same` every spatial conv and branch pool is zero-padded
    /// and the balancing crops are left out, the way a network meant only for
    /// fixed-size patches is usually built. Weights match `build` for the same
    /// seed.
    pub fn build_with_padding(&self, seed: u64, name: &str, padding: Padding) -> Result<NetGraph> {
        let mut b = Builder::new(seed, self.input_channels, false);
        let stem = b.conv("stem", "input", self.stem_channels, self.stem_kernel, 1, padding);
        let mut x = b.affine("stem_bn", &stem, Activation::Relu);
        for (s, stage) in self.stages.iter().enumerate() {
            x = b.pool(&format!("pool{}", s + 1), &x, true, 2, 2, Padding::Valid);
            for r in 0..stage.repeats {
                let prefix = format!("block{}_{}", s + 1, r + 1);
                let cat = b.inception_block(&prefix, &x, stage.branch_width, padding);
                x = b.affine(&format!("{prefix}_mix"), &cat, Activation::Relu);
            }
        }
        let logits = b.conv_gain(
            "logits",
            &x,
            self.classes,
            self.head_kernel,
            1,
            Padding::Valid,
            self.logit_gain,
        );
        let head_kind = if self.classes == 1 {
            HeadKind::Logistic
        } else {
            HeadKind::Softmax
        };
        let c = b.channels[&logits];
        b.push("likelihood", LayerKind::LikelihoodHead { head: head_kind }, &[&logits], c);
        b.finish(name, "bench", self.input_channels)
    }
}

/// Small FCN-safe Inception-style network with seeded random weights.
pub fn build_mini_inception(seed: u64) -> NetGraph {
    MiniInceptionConfig::default()
        .build(seed, "mini-inception")
        .expect("mini-inception is well-formed")
}

/// Output cells per side of one training patch of the naive variant.
pub const NAIVE_TILE_CELLS: usize = 16;

/// The mini-Inception built same-padded and crop-free, as a network trained
/// on fixed-size patches would be, with the same weights as
/// `build_mini_inception(seed)`. Its training patch yields a
/// `NAIVE_TILE_CELLS`-wide output block.
pub fn build_mini_inception_naive(seed: u64) -> NetGraph {
    let g = MiniInceptionConfig::default()
        .build_with_padding(seed, "mini-inception-naive", Padding::Same)
        .expect("naive mini-inception is well-formed");
    let fp = g.output_footprint();
    let patch = fp.extent + (NAIVE_TILE_CELLS - 1) * fp.stride;
    g.with_training_patch(Some(patch))
}

/// Mini-Inception scaled to a 911 px canonical patch at stride 32.
pub fn build_paper_scale_inception(seed: u64) -> NetGraph {
    MiniInceptionConfig::paper_scale()
        .build(seed, "paper-scale-inception")
        .expect("paper-scale config is well-formed")
}

/// Hand-constructed detector: likelihood >= 0.9 where the L1 distance to
/// `target_rgb` is at most `tolerance`, <= 0.1 where it is at least twice that.
///
/// Layers: 1x1 conv splitting each channel into `x - t` and `t - x`, ReLU (the
/// pair sums to `|x - t|`), 1x1 conv computing `g * (1.5 tol - L1)`, logistic.
pub fn build_color_detector(target_rgb: [f32; 3], tolerance: f32) -> Result<NetGraph> {
    if !(tolerance > 0.0) {
        return Err(GraphError::ShapeMismatch {
            name: "tolerance".into(),
            detail: format!("must be positive, got {tolerance}"),
        });
    }
    let mut w = WeightStore::default();
    let mut split_w = vec![0.0f32; 6 * 3];
    let mut split_b = vec![0.0f32; 6];
    for c in 0..3 {
        split_w[(2 * c) * 3 + c] = 1.0;
        split_b[2 * c] = -target_rgb[c];
        split_w[(2 * c + 1) * 3 + c] = -1.0;
        split_b[2 * c + 1] = target_rgb[c];
    }
    w.insert("split.weight", vec![6, 3, 1, 1], split_w);
    w.insert("split.bias", vec![6], split_b);
    w.insert("abs.scale", vec![6], vec![1.0; 6]);
    w.insert("abs.shift", vec![6], vec![0.0; 6]);
    let gain = 2.0 * 9f32.ln() / tolerance;
    w.insert("score.weight", vec![1, 6, 1, 1], vec![-gain; 6]);
    w.insert("score.bias", vec![1], vec![gain * 1.5 * tolerance]);

    let conv = |ic, oc| LayerKind::Conv {
        in_channels: ic,
        out_channels: oc,
        kernel: 1,
        stride: 1,
        padding: Padding::Valid,
    };
    NetGraph::new(
        "color-detector",
        "any",
        3,
        vec![
            LayerSpec::new("input", LayerKind::Input { channels: 3 }, &[]),
            LayerSpec::new("split", conv(3, 6), &["input"]),
            LayerSpec::new(
                "abs",
                LayerKind::AffineAct {
                    channels: 6,
                    activation: Activation::Relu,
                },
                &["split"],
            ),
            LayerSpec::new("score", conv(6, 1), &["abs"]),
            LayerSpec::new(
                "likelihood",
                LayerKind::LikelihoodHead {
                    head: HeadKind::Logistic,
                },
                &["score"],
            ),
        ],
        w,
    )
}

/// Random FCN-safe graph of up to `max_depth` units (conv, pool, crop or a
/// balanced two-branch block). Weights are strictly positive and there is no
/// ReLU, so every pixel in a receptive field moves the output when raised.
pub fn random_fcn_graph(seed: u64, max_depth: usize) -> NetGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let input_channels = rng.random_range(1..=2);
    let mut b = Builder::new(seed, input_channels, true);
    let depth = rng.random_range(1..=max_depth.max(1));
    let mut x = "input".to_string();
    for u in 0..depth {
        x = match rng.random_range(0..5) {
            0 => {
                let k = rng.random_range(1..=4);
                let s = rng.random_range(1..=2);
                b.conv(&format!("conv{u}"), &x, 2, k, s, Padding::Valid)
            }
            1 | 2 => {
                let k = rng.random_range(2..=3);
                let s = rng.random_range(1..=2);
                let is_max = rng.random_bool(0.5);
                b.pool(&format!("pool{u}"), &x, is_max, k, s, Padding::Valid)
            }
            3 => b.crop(&format!("crop{u}"), &x, 1),
            _ => {
                let kb = if rng.random_bool(0.5) { 3 } else { 5 };
                let a = b.conv(&format!("br{u}_a"), &x, 1, 1, 1, Padding::Valid);
                let a = b.crop(&format!("br{u}_a_crop"), &a, (kb - 1) / 2);
                let c = b.conv(&format!("br{u}_b"), &x, 2, kb, 1, Padding::Valid);
                b.concat(&format!("br{u}_cat"), &[&a, &c])
            }
        };
    }
    b.finish(&format!("random-{seed}"), "any", input_channels)
        .expect("random graph is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::ViolationRule;

    #[test]
    fn mini_inception_is_fcn_safe() {
        let g = build_mini_inception(0);
        assert!(g.validate_fcn_safe().is_empty());
        let geo = g.geometry().unwrap();
        assert_eq!(geo.canonical_patch_px, 30);
        assert_eq!(geo.output_stride_px, 4);
        assert_eq!(geo.receptive_field_px, 30);
        let concats = g.layers().iter().filter(|l| matches!(l.kind, LayerKind::Concat)).count();
        assert!(concats >= 2);
    }

    #[test]
    fn seeds_share_topology_not_weights() {
        let a = build_mini_inception(0);
        let b = build_mini_inception(1);
        assert_eq!(a.topology_signature(), b.topology_signature());
        assert_ne!(a.weights().payload(), b.weights().payload());
        assert_eq!(a.weights().payload(), build_mini_inception(0).weights().payload());
    }

    #[test]
    fn naive_variant_is_same_padded_without_crops() {
        let g = build_mini_inception_naive(0);
        let v = g.validate_fcn_safe();
        assert!(v.iter().all(|v| v.rule == ViolationRule::SamePadding));
        assert!(v.iter().any(|v| v.layer == "stem"));
        assert!(!g.layers().iter().any(|l| matches!(l.kind, LayerKind::Crop { .. })));
        assert_eq!(g.training_patch_px(), 64);
        assert_eq!(g.output_len(g.training_patch_px()), Some(NAIVE_TILE_CELLS));
        assert_eq!(g.weights().payload(), build_mini_inception(0).weights().payload());
    }

    #[test]
    fn single_same_conv_variant() {
        let g = build_mini_inception(0).with_padding("stem", Padding::Same).unwrap();
        let v = g.validate_fcn_safe();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].layer, "stem");
        assert_eq!(g.output_footprint().extent, 28);
    }

    #[test]
    fn paper_scale_geometry() {
        let g = build_paper_scale_inception(0);
        let geo = g.geometry().unwrap();
        assert_eq!(geo.canonical_patch_px, 911);
        assert_eq!(geo.output_stride_px, 32);
    }

    #[test]
    fn color_detector_geometry() {
        let g = build_color_detector([1.0, 0.0, 1.0], 0.3).unwrap();
        let geo = g.geometry().unwrap();
        assert_eq!(
            (geo.receptive_field_px, geo.output_stride_px, geo.canonical_patch_px),
            (1, 1, 1)
        );
        assert!(build_color_detector([1.0, 0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn random_graphs_are_fcn_safe() {
        for seed in 0..100 {
            let g = random_fcn_graph(seed, 5);
            assert!(g.validate_fcn_safe().is_empty(), "seed {seed}: {:?}", g.validate_fcn_safe());
        }
    }

    #[test]
    fn branch_extent_mismatch_reported_then_fixed_by_crop() {
        // 1x1 branch vs 3x3 branch, no crop.
        let mk = |crop_a: usize| {
            let mut b = Builder::new(0, 1, false);
            let a = b.conv("a", "input", 1, 1, 1, Padding::Valid);
            let a = b.crop("a_crop", &a, crop_a);
            let c = b.conv("b", "input", 1, 3, 1, Padding::Valid);
            b.concat("cat", &[&a, &c]);
            b.finish("two-branch", "any", 1).unwrap()
        };
        let v = mk(0).validate_fcn_safe();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].layer, "cat");
        assert_eq!(
            v[0].rule,
            ViolationRule::BranchExtentMismatch {
                extents: vec![1, 3],
                balancing_crops: Some(vec![1, 0])
            }
        );
        assert!(mk(1).validate_fcn_safe().is_empty());
    }
}
