use serde::{Deserialize, Serialize};

use super::{GraphError, LayerKind, LayerSpec, NetGraph, Node, Op, Result, Violation, ViolationRule};
use crate::tensor::{output_len, Padding};

/// How one node's output grid sits on the input image, in input pixels.
///
/// `extent` is the support: output index `i` exists iff input pixels
/// `[i*stride, i*stride + extent)` all exist, so an `n` px input yields
/// `floor((n - extent) / stride) + 1` outputs. `receptive_field` and `start`
/// describe the pixels that actually influence output 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub stride: usize,
    pub extent: usize,
    pub receptive_field: usize,
    pub start: isize,
}

impl Footprint {
    const INPUT: Footprint = Footprint {
        stride: 1,
        extent: 1,
        receptive_field: 1,
        start: 0,
    };

    pub fn output_len(&self, n: usize) -> Option<usize> {
        (n >= self.extent).then(|| (n - self.extent) / self.stride + 1)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            receptive_field_px: self.receptive_field,
            output_stride_px: self.stride,
            offset_px: self.start + (self.receptive_field as isize - 1) / 2,
            canonical_patch_px: self.extent,
            start_px: self.start,
        }
    }
}

/// Alignment contract between an output grid and input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Input extent influencing one output value.
    pub receptive_field_px: usize,
    /// Input-pixel spacing between adjacent outputs.
    pub output_stride_px: usize,
    /// Center (rounded down) of the input window feeding output 0.
    pub offset_px: isize,
    /// Smallest input side yielding exactly one output.
    pub canonical_patch_px: usize,
    /// First input pixel of the window feeding output 0.
    pub start_px: isize,
}

impl GridGeometry {
    pub fn output_len(&self, n: usize) -> Option<usize> {
        (n >= self.canonical_patch_px).then(|| (n - self.canonical_patch_px) / self.output_stride_px + 1)
    }

    /// Exact input-pixel center of output index `i` (half-integer for even
    /// receptive fields).
    pub fn cell_center_px(&self, i: usize) -> f64 {
        self.start_px as f64 + (self.receptive_field_px as f64 - 1.0) / 2.0 + (i * self.output_stride_px) as f64
    }

    /// The same grid subsampled to a coarser stride.
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.output_stride_px = stride;
        self
    }
}

pub(super) fn analyze(layers: &[LayerSpec], nodes: &[Node]) -> (Vec<Footprint>, Vec<Violation>) {
    let mut fps: Vec<Footprint> = Vec::with_capacity(nodes.len());
    let mut violations = Vec::new();
    for (spec, node) in layers.iter().zip(nodes) {
        let prev = node.inputs.first().map(|&i| fps[i]).unwrap_or(Footprint::INPUT);
        let fp = match &node.op {
            Op::Input => Footprint::INPUT,
            Op::Conv {
                kernel, stride, padding, ..
            } => windowed(&mut violations, &spec.name, prev, kernel.kh(), *stride, *padding),
            Op::Pool {
                kernel, stride, padding, ..
            } => windowed(&mut violations, &spec.name, prev, *kernel, *stride, *padding),
            Op::Affine { .. } | Op::Head(_) => prev,
            Op::Crop(k) => Footprint {
                stride: prev.stride,
                extent: prev.extent + 2 * k * prev.stride,
                receptive_field: prev.receptive_field,
                start: prev.start + (k * prev.stride) as isize,
            },
            Op::Concat => {
                let ins: Vec<Footprint> = node.inputs.iter().map(|&i| fps[i]).collect();
                let strides: Vec<usize> = ins.iter().map(|f| f.stride).collect();
                let extents: Vec<usize> = ins.iter().map(|f| f.extent).collect();
                if strides.iter().any(|&s| s != strides[0]) {
                    violations.push(Violation {
                        layer: spec.name.clone(),
                        rule: ViolationRule::BranchStrideMismatch { strides },
                    });
                } else if extents.iter().any(|&e| e != extents[0]) {
                    let max = *extents.iter().max().expect("concat has inputs");
                    let step = 2 * strides[0];
                    let balancing_crops = extents
                        .iter()
                        .map(|&e| ((max - e) % step == 0).then_some((max - e) / step))
                        .collect::<Option<Vec<usize>>>();
                    violations.push(Violation {
                        layer: spec.name.clone(),
                        rule: ViolationRule::BranchExtentMismatch {
                            extents,
                            balancing_crops,
                        },
                    });
                }
                // Receptive field is the union of the branch windows.
                let start = ins.iter().map(|f| f.start).min().unwrap_or(0);
                let end = ins.iter().map(|f| f.start + f.receptive_field as isize).max().unwrap_or(1);
                Footprint {
                    stride: ins[0].stride,
                    extent: ins.iter().map(|f| f.extent).max().unwrap_or(1),
                    receptive_field: (end - start) as usize,
                    start,
                }
            }
        };
        fps.push(fp);
    }
    (fps, violations)
}

fn windowed(
    violations: &mut Vec<Violation>,
    layer: &str,
    prev: Footprint,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Footprint {
    let grow = (k - 1) * prev.stride;
    match padding {
        Padding::Valid => Footprint {
            stride: prev.stride * stride,
            extent: prev.extent + grow,
            receptive_field: prev.receptive_field + grow,
            start: prev.start,
        },
        Padding::Same => {
            violations.push(Violation {
                layer: layer.to_string(),
                rule: ViolationRule::SamePadding,
            });
            Footprint {
                stride: prev.stride * stride,
                extent: prev.extent,
                receptive_field: prev.receptive_field + grow,
                start: prev.start - ((k as isize - 1) / 2) * prev.stride as isize,
            }
        }
    }
}

/// Analytic multiply-add count for one forward pass on an `input_hw` square
/// input. Convs count `outH*outW*outC*inC*kh*kw`; pools, affine and head
/// layers one op per output element; crop and concat are free.
pub fn count_flops(g: &NetGraph, input_hw: usize) -> Result<u64> {
    let required = g.output_footprint().extent;
    if input_hw < required {
        return Err(GraphError::InputTooSmall {
            required,
            actual: input_hw,
        });
    }
    let mut sizes: Vec<usize> = Vec::with_capacity(g.nodes().len());
    let mut total: u64 = 0;
    for (spec, node) in g.layers().iter().zip(g.nodes()) {
        let n_in = node.inputs.first().map(|&i| sizes[i]).unwrap_or(input_hw);
        let too_small = || GraphError::InputTooSmall {
            required,
            actual: input_hw,
        };
        let n_out = match &node.op {
            Op::Input => input_hw,
            Op::Conv {
                kernel, stride, padding, ..
            } => {
                let n = output_len(n_in, kernel.kh(), *stride, *padding).ok_or_else(too_small)?;
                total += (n * n * kernel.out_channels() * kernel.in_channels() * kernel.kh() * kernel.kw()) as u64;
                n
            }
            Op::Pool {
                kernel, stride, padding, ..
            } => {
                let n = output_len(n_in, *kernel, *stride, *padding).ok_or_else(too_small)?;
                total += (n * n * node.channels) as u64;
                n
            }
            Op::Affine { .. } | Op::Head(_) => {
                total += (n_in * n_in * node.channels) as u64;
                n_in
            }
            Op::Crop(k) => n_in.checked_sub(2 * k).filter(|&n| n > 0).ok_or_else(too_small)?,
            Op::Concat => n_in,
        };
        debug_assert!(!matches!(spec.kind, LayerKind::Input { .. }) || node.inputs.is_empty());
        sizes.push(n_out);
    }
    Ok(total)
}

/// Cost of covering an `fov_px` square with canonical patches at `stride`.
pub fn count_sliding_flops(g: &NetGraph, fov_px: usize, stride: usize) -> Result<u64> {
    let p = g.output_footprint().extent;
    if fov_px < p {
        return Err(GraphError::InputTooSmall {
            required: p,
            actual: fov_px,
        });
    }
    let per_axis = ((fov_px - p) / stride + 1) as u64;
    Ok(per_axis * per_axis * count_flops(g, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{LayerKind, LayerSpec, NetGraph, WeightStore};
    use crate::tensor::Padding;

    fn conv(name: &str, from: &str, ic: usize, oc: usize, k: usize, w: &mut WeightStore) -> LayerSpec {
        w.insert(format!("{name}.weight"), vec![oc, ic, k, k], vec![1.0; oc * ic * k * k]);
        w.insert(format!("{name}.bias"), vec![oc], vec![0.0; oc]);
        LayerSpec::new(
            name,
            LayerKind::Conv {
                in_channels: ic,
                out_channels: oc,
                kernel: k,
                stride: 1,
                padding: Padding::Valid,
            },
            &[from],
        )
    }

    #[test]
    fn flops_single_conv() {
        let mut w = WeightStore::default();
        let layers = vec![
            LayerSpec::new("in", LayerKind::Input { channels: 1 }, &[]),
            conv("c", "in", 1, 1, 3, &mut w),
        ];
        let g = NetGraph::new("t", "", 1, layers, w).unwrap();
        assert_eq!(count_flops(&g, 5).unwrap(), 81);
        assert!(matches!(count_flops(&g, 2), Err(GraphError::InputTooSmall { .. })));
    }

    #[test]
    fn flops_scaling_is_sub_quadratic_and_approaches_four() {
        let mut w = WeightStore::default();
        let layers = vec![
            LayerSpec::new("in", LayerKind::Input { channels: 1 }, &[]),
            conv("a", "in", 1, 2, 3, &mut w),
            conv("b", "a", 2, 2, 3, &mut w),
        ];
        let g = NetGraph::new("t", "", 1, layers, w).unwrap();
        // Valid convs shrink the output by a constant, so the ratio is
        // ((2n-4)/(n-4))^2: above 4 and decreasing towards it.
        let mut last = f64::INFINITY;
        for n in [8usize, 16, 64, 256, 1024] {
            let ratio = count_flops(&g, 2 * n).unwrap() as f64 / count_flops(&g, n).unwrap() as f64;
            assert!(ratio > 4.0 && ratio < last, "ratio {ratio} at {n}");
            last = ratio;
        }
        assert!(last - 4.0 < 0.05);
    }
}
