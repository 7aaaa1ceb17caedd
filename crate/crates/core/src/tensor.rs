//! Dense HWC float tensors and the numerical kernels every network layer is
//! built from.
//!
//! All kernels are pure functions. Accumulation happens in `f64` and is
//! rounded to `f32` on store, with a fixed summation order per output element,
//! so two executions that compute the same output element from the same inputs
//! agree bit for bit regardless of how the surrounding image was tiled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {height}x{width}x{channels}")]
    LengthMismatch {
        len: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("tensor dimensions must be positive, got {0}x{1}x{2}")]
    ZeroDimension(usize, usize, usize),
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("window {kh}x{kw} larger than input {height}x{width}")]
    WindowTooLarge {
        kh: usize,
        kw: usize,
        height: usize,
        width: usize,
    },
    #[error("parameter vector length {actual} does not match {expected} channels")]
    ParamLength { expected: usize, actual: usize },
    #[error("spatial size mismatch in concat: {0}x{1} vs {2}x{3}")]
    SpatialMismatch(usize, usize, usize, usize),
    #[error("concat needs at least one input")]
    EmptyConcat,
    #[error("crop of {k} exhausts {height}x{width} tensor")]
    CropExhausts { k: usize, height: usize, width: usize },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("region {y}+{h} x {x}+{w} outside {height}x{width} tensor")]
    RegionOutOfBounds {
        y: usize,
        x: usize,
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major (height, width, channels) `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::ZeroDimension(height, width, channels));
        }
        if data.len() != height * width * channels {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                height,
                width,
                channels,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty tensor shape");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a tensor from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn shape")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    /// Copies an `h` x `w` window whose top-left corner is `(y, x)`.
    pub fn region(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return Err(TensorError::RegionOutOfBounds {
                y,
                x,
                h,
                w,
                height: self.height,
                width: self.width,
            });
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for row in y..y + h {
            let start = self.index(row, x, 0);
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Tensor::new(h, w, self.channels, data)
    }

    /// Extracts a single channel as an `h x w x 1` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Tensor::new(self.height, self.width, 1, data).expect("channel shape")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.height != other.height || self.width != other.width || self.channels != other.channels {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Independent logistic per channel.
    Logistic,
    /// Softmax across channels at every location.
    Softmax,
}

/// Output length along one axis for a window of `k` at `stride`.
pub fn output_len(input: usize, k: usize, stride: usize, padding: Padding) -> Option<usize> {
    if stride == 0 || k == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (input >= k).then(|| (input - k) / stride + 1),
        Padding::Same => Some(input.div_ceil(stride)),
    }
}

/// Leading (top/left) zero padding for `same` mode; the odd pixel goes to the
/// trailing edge.
pub fn same_pad_before(input: usize, k: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    total / 2
}

/// Convolution weights in `[out_c, in_c, kh, kw]` order, plus a repacked copy in
/// `[kh, kw, in_c, out_c]` order used by the kernel's inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f32>,
    packed: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::ZeroDimension(out_channels, in_channels, kh * kw));
        }
        let expected = out_channels * in_channels * kh * kw;
        if weights.len() != expected {
            return Err(TensorError::ParamLength {
                expected,
                actual: weights.len(),
            });
        }
        let mut packed = vec![0.0f64; expected];
        for oc in 0..out_channels {
            for ic in 0..in_channels {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = ((oc * in_channels + ic) * kh + ky) * kw + kx;
                        let dst = ((ky * kw + kx) * in_channels + ic) * out_channels + oc;
                        packed[dst] = weights[src] as f64;
                    }
                }
            }
        }
        Ok(Self {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
            packed,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn kh(&self) -> usize {
        self.kh
    }
    pub fn kw(&self) -> usize {
        self.kw
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// 2-D cross-correlation (no kernel flip).
pub fn conv2d(
    input: &Tensor,
    kernel: &ConvKernel,
    bias: &[f32],
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    if kernel.in_channels != input.channels {
        return Err(TensorError::ChannelMismatch {
            expected: kernel.in_channels,
            actual: input.channels,
        });
    }
    if bias.len() != kernel.out_channels {
        return Err(TensorError::ParamLength {
            expected: kernel.out_channels,
            actual: bias.len(),
        });
    }
    let (kh, kw) = (kernel.kh, kernel.kw);
    let too_large = TensorError::WindowTooLarge {
        kh,
        kw,
        height: input.height,
        width: input.width,
    };
    let out_h = output_len(input.height, kh, stride, padding).ok_or(too_large.clone())?;
    let out_w = output_len(input.width, kw, stride, padding).ok_or(too_large)?;
    let (pad_top, pad_left) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (
            same_pad_before(input.height, kh, stride),
            same_pad_before(input.width, kw, stride),
        ),
    };

    let oc_n = kernel.out_channels;
    let ic_n = kernel.in_channels;
    let mut out = vec![0.0f32; out_h * out_w * oc_n];
    let mut acc = vec![0.0f64; oc_n];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for (a, &b) in acc.iter_mut().zip(bias) {
                *a = b as f64;
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad_top as isize;
                if iy < 0 || iy >= input.height as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad_left as isize;
                    if ix < 0 || ix >= input.width as isize {
                        continue;
                    }
                    let px = input.pixel(iy as usize, ix as usize);
                    let wbase = (ky * kw + kx) * ic_n * oc_n;
                    for (ic, &v) in px.iter().enumerate() {
                        let v = v as f64;
                        let w = &kernel.packed[wbase + ic * oc_n..wbase + (ic + 1) * oc_n];
                        for (a, &wv) in acc.iter_mut().zip(w) {
                            *a += v * wv;
                        }
                    }
                }
            }
            let base = (oy * out_w + ox) * oc_n;
            for (o, &a) in out[base..base + oc_n].iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    }
    Tensor::new(out_h, out_w, oc_n, out)
}

/// Max or average pooling; channels are preserved. Same padding pads with
/// zeros, which take part in both the max and the average.
pub fn pool2d(input: &Tensor, kind: PoolKind, k: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let too_large = TensorError::WindowTooLarge {
        kh: k,
        kw: k,
        height: input.height,
        width: input.width,
    };
    let out_h = output_len(input.height, k, stride, padding).ok_or(too_large.clone())?;
    let out_w = output_len(input.width, k, stride, padding).ok_or(too_large)?;
    let (pad_top, pad_left) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (
            same_pad_before(input.height, k, stride),
            same_pad_before(input.width, k, stride),
        ),
    };
    let c_n = input.channels;
    let mut out = Vec::with_capacity(out_h * out_w * c_n);
    let norm = (k * k) as f64;
    let at = |y: usize, x: usize, c: usize| -> f32 {
        let iy = y as isize - pad_top as isize;
        let ix = x as isize - pad_left as isize;
        if iy < 0 || ix < 0 || iy >= input.height as isize || ix >= input.width as isize {
            0.0
        } else {
            input.get(iy as usize, ix as usize, c)
        }
    };
    for oy in 0..out_h {
        for ox in 0..out_w {
            for c in 0..c_n {
                let value = match kind {
                    PoolKind::Max => {
                        let mut m = f32::NEG_INFINITY;
                        for ky in 0..k {
                            for kx in 0..k {
                                m = m.max(at(oy * stride + ky, ox * stride + kx, c));
                            }
                        }
                        m
                    }
                    PoolKind::Avg => {
                        let mut s = 0.0f64;
                        for ky in 0..k {
                            for kx in 0..k {
                                s += at(oy * stride + ky, ox * stride + kx, c) as f64;
                            }
                        }
                        (s / norm) as f32
                    }
                };
                out.push(value);
            }
        }
    }
    Tensor::new(out_h, out_w, c_n, out)
}

/// Per-channel `act(scale * x + shift)`; folded batch-norm at inference time.
pub fn affine_act(
    input: &Tensor,
    scale: &[f32],
    shift: &[f32],
    activation: Activation,
) -> Result<Tensor> {
    let c_n = input.channels;
    for v in [scale, shift] {
        if v.len() != c_n {
            return Err(TensorError::ParamLength {
                expected: c_n,
                actual: v.len(),
            });
        }
    }
    let data = input
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = i % c_n;
            let v = (scale[c] as f64 * x as f64 + shift[c] as f64) as f32;
            match activation {
                Activation::Relu => v.max(0.0),
                Activation::None => v,
            }
        })
        .collect();
    Tensor::new(input.height, input.width, c_n, data)
}

pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or(TensorError::EmptyConcat)?;
    let (h, w) = (first.height, first.width);
    for t in inputs {
        if t.height != h || t.width != w {
            return Err(TensorError::SpatialMismatch(h, w, t.height, t.width));
        }
    }
    let c_total: usize = inputs.iter().map(|t| t.channels).sum();
    let mut data = Vec::with_capacity(h * w * c_total);
    for y in 0..h {
        for x in 0..w {
            for t in inputs {
                data.extend_from_slice(t.pixel(y, x));
            }
        }
    }
    Tensor::new(h, w, c_total, data)
}

/// Removes a border of width `k` from every side.
pub fn crop_border(input: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Ok(input.clone());
    }
    if input.height <= 2 * k || input.width <= 2 * k {
        return Err(TensorError::CropExhausts {
            k,
            height: input.height,
            width: input.width,
        });
    }
    input.region(k, k, input.height - 2 * k, input.width - 2 * k)
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps logits to likelihoods in `[0, 1]`.
pub fn likelihood_head(input: &Tensor, kind: HeadKind) -> Tensor {
    let c_n = input.channels;
    let data = match kind {
        HeadKind::Logistic => input.data.iter().map(|&v| logistic(v as f64) as f32).collect(),
        HeadKind::Softmax => {
            let mut out = Vec::with_capacity(input.data.len());
            for px in input.data.chunks_exact(c_n) {
                let m = px.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
                let exps: Vec<f64> = px.iter().map(|&v| (v as f64 - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| (e / z) as f32));
            }
            out
        }
    };
    Tensor::new(input.height, input.width, c_n, data).expect("head shape")
}
