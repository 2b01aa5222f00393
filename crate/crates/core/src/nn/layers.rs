//! Layer kernels with hand-written backward passes.
//!
//! All layers work on batches shaped `[B, C, H, W]`. One-dimensional
//! signals use `H = 1` with `1 x k` kernels.

use std::fmt;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Architecture descriptor of a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        pool_h: usize,
        pool_w: usize,
    },
    GlobalAvgPool,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    /// Square convolution with stride 1 and "same" padding.
    pub fn conv_same(out_channels: usize, k: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            pad_h: k / 2,
            pad_w: k / 2,
        }
    }

    /// `1 x k` convolution with stride 1 and "same" padding along the width.
    pub fn conv1d_same(out_channels: usize, k: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel_h: 1,
            kernel_w: k,
            stride: 1,
            pad_h: 0,
            pad_w: k / 2,
        }
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                pad_h,
                pad_w,
            } => {
                if stride == 0 || kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                    return Err(Error::Shape(format!("degenerate convolution {self}")));
                }
                if h + 2 * pad_h < kernel_h || w + 2 * pad_w < kernel_w {
                    return Err(Error::Shape(format!("{self} does not fit input [{c}, {h}, {w}]")));
                }
                Ok([
                    out_channels,
                    (h + 2 * pad_h - kernel_h) / stride + 1,
                    (w + 2 * pad_w - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::BatchNorm | LayerSpec::Relu => Ok([c, h, w]),
            LayerSpec::MaxPool { pool_h, pool_w } => {
                if pool_h == 0 || pool_w == 0 || h < pool_h || w < pool_w {
                    return Err(Error::Shape(format!("{self} does not fit input [{c}, {h}, {w}]")));
                }
                Ok([c, h / pool_h, w / pool_w])
            }
            LayerSpec::GlobalAvgPool => Ok([c, 1, 1]),
            LayerSpec::Dense { out_features } => {
                if out_features == 0 {
                    return Err(Error::Shape("dense layer with zero outputs".into()));
                }
                Ok([out_features, 1, 1])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => write!(f, "conv {out_channels}@{kernel_h}x{kernel_w}"),
            LayerSpec::BatchNorm => f.write_str("batchnorm"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { pool_h, pool_w } => write!(f, "maxpool {pool_h}x{pool_w}"),
            LayerSpec::GlobalAvgPool => f.write_str("global-avg-pool"),
            LayerSpec::Dense { out_features } => write!(f, "dense {out_features}"),
        }
    }
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    /// `batch` is set when batch statistics (not running ones) were used.
    Norm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch: bool,
    },
    Output(Tensor),
    Argmax(Vec<u32>),
    Nothing,
}

/// Per-channel batch statistics produced by batch norm in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A layer instance: its descriptor, resolved shapes and parameters.
///
/// Trainable parameters are `[weight, bias]` for conv and dense layers and
/// `[gamma, beta]` for batch norm. Batch norm additionally keeps
/// `[running_mean, running_var]` in `state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub params: Vec<Vec<f64>>,
    pub state: Vec<Vec<f64>>,
}

impl Layer {
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, input_shape: [usize; 3], rng: &mut R) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        let [c, h, w] = input_shape;
        let he_uniform = |fan_in: usize, n: usize, rng: &mut R| -> Vec<f64> {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let (params, state) = match spec {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => {
                let fan_in = c * kernel_h * kernel_w;
                (
                    vec![
                        he_uniform(fan_in, out_channels * fan_in, rng),
                        vec![0.0; out_channels],
                    ],
                    vec![],
                )
            }
            LayerSpec::BatchNorm => (
                vec![vec![1.0; c], vec![0.0; c]],
                vec![vec![0.0; c], vec![1.0; c]],
            ),
            LayerSpec::Dense { out_features } => {
                let fan_in = c * h * w;
                (
                    vec![he_uniform(fan_in, out_features * fan_in, rng), vec![0.0; out_features]],
                    vec![],
                )
            }
            LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::GlobalAvgPool => (vec![], vec![]),
        };
        Ok(Layer {
            spec,
            input_shape,
            output_shape,
            params,
            state,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let [c, h, w] = self.input_shape;
        if x.shape.len() != 4 || x.shape[1..] != [c, h, w] {
            return Err(Error::Shape(format!(
                "{} expects [B, {c}, {h}, {w}], got {:?}",
                self.spec, x.shape
            )));
        }
        Ok(x.shape[0])
    }

    fn out_tensor(&self, batch: usize) -> Tensor {
        let [c, h, w] = self.output_shape;
        Tensor::zeros(vec![batch, c, h, w])
    }

    /// Forward pass. Batch norm normalizes with batch statistics when `train`
    /// is set and returns them; otherwise it uses the running statistics.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Cache, Option<BatchStats>)> {
        let batch = self.check_input(x)?;
        let [c, h, w] = self.input_shape;
        let [oc, oh, ow] = self.output_shape;
        match self.spec {
            LayerSpec::Conv {
                kernel_h,
                kernel_w,
                stride,
                pad_h,
                pad_w,
                ..
            } => {
                let geom = ConvGeometry {
                    c_in: c,
                    h,
                    w,
                    c_out: oc,
                    kh: kernel_h,
                    kw: kernel_w,
                    stride,
                    pad_h,
                    pad_w,
                    oh,
                    ow,
                };
                let mut out = self.out_tensor(batch);
                let in_n = c * h * w;
                let out_n = oc * oh * ow;
                for b in 0..batch {
                    geom.forward(
                        &x.data[b * in_n..(b + 1) * in_n],
                        &self.params[0],
                        &self.params[1],
                        &mut out.data[b * out_n..(b + 1) * out_n],
                    );
                }
                Ok((out, Cache::Input(x.clone()), None))
            }
            LayerSpec::BatchNorm => {
                let spatial = h * w;
                let (gamma, beta) = (&self.params[0], &self.params[1]);
                let mut out = self.out_tensor(batch);
                let mut xhat = Tensor::zeros(x.shape.clone());
                let mut inv_std = vec![0.0; c];
                let mut stats = None;
                if train {
                    let n = (batch * spatial) as f64;
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for ch in 0..c {
                        let values = channel_iter(&x.data, batch, c, spatial, ch);
                        let m = values.clone().sum::<f64>() / n;
                        let v = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                        mean[ch] = m;
                        var[ch] = v;
                        inv_std[ch] = 1.0 / (v + BN_EPSILON).sqrt();
                    }
                    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                    stats = Some(BatchStats {
                        var: var.iter().map(|v| v * unbiased).collect(),
                        mean: mean.clone(),
                    });
                    normalize(x, &mean, &inv_std, gamma, beta, &mut xhat, &mut out, c, spatial);
                } else {
                    let (rm, rv) = (&self.state[0], &self.state[1]);
                    for ch in 0..c {
                        inv_std[ch] = 1.0 / (rv[ch] + BN_EPSILON).sqrt();
                    }
                    normalize(x, rm, &inv_std, gamma, beta, &mut xhat, &mut out, c, spatial);
                }
                Ok((
                    out,
                    Cache::Norm {
                        xhat,
                        inv_std,
                        batch: train,
                    },
                    stats,
                ))
            }
            LayerSpec::Relu => {
                let out = Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                };
                Ok((out.clone(), Cache::Output(out), None))
            }
            LayerSpec::MaxPool { pool_h, pool_w } => {
                let mut out = self.out_tensor(batch);
                let mut argmax = vec![0u32; out.len()];
                let mut o = 0;
                for b in 0..batch {
                    for ch in 0..c {
                        let plane = (b * c + ch) * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_at = plane + oy * pool_h * w + ox * pool_w;
                                for py in 0..pool_h {
                                    let row = plane + (oy * pool_h + py) * w + ox * pool_w;
                                    for (px, &v) in x.data[row..row + pool_w].iter().enumerate() {
                                        if v > best {
                                            best = v;
                                            best_at = row + px;
                                        }
                                    }
                                }
                                out.data[o] = best;
                                argmax[o] = best_at as u32;
                                o += 1;
                            }
                        }
                    }
                }
                Ok((out, Cache::Argmax(argmax), None))
            }
            LayerSpec::GlobalAvgPool => {
                let spatial = h * w;
                let mut out = self.out_tensor(batch);
                for (o, plane) in out.data.iter_mut().zip(x.data.chunks(spatial)) {
                    *o = plane.iter().sum::<f64>() / spatial as f64;
                }
                Ok((out, Cache::Nothing, None))
            }
            LayerSpec::Dense { out_features } => {
                let in_n = c * h * w;
                let (weight, bias) = (&self.params[0], &self.params[1]);
                let mut out = self.out_tensor(batch);
                for b in 0..batch {
                    let xin = x.item(b);
                    for o in 0..out_features {
                        let row = &weight[o * in_n..(o + 1) * in_n];
                        out.data[b * out_features + o] =
                            bias[o] + row.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Ok((out, Cache::Input(x.clone()), None))
            }
        }
    }

    /// Backward pass: accumulates parameter gradients into `grads` (same
    /// layout as `params`) and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Vec<f64>]) -> Result<Tensor> {
        let batch = grad_out.batch();
        let [c, h, w] = self.input_shape;
        let [oc, oh, ow] = self.output_shape;
        if grad_out.shape[1..] != [oc, oh, ow] {
            return Err(Error::Shape(format!(
                "{} output gradient {:?} does not match [B, {oc}, {oh}, {ow}]",
                self.spec, grad_out.shape
            )));
        }
        let mut grad_in = Tensor::zeros(vec![batch, c, h, w]);
        match (self.spec, cache) {
            (
                LayerSpec::Conv {
                    kernel_h,
                    kernel_w,
                    stride,
                    pad_h,
                    pad_w,
                    ..
                },
                Cache::Input(x),
            ) => {
                let geom = ConvGeometry {
                    c_in: c,
                    h,
                    w,
                    c_out: oc,
                    kh: kernel_h,
                    kw: kernel_w,
                    stride,
                    pad_h,
                    pad_w,
                    oh,
                    ow,
                };
                let in_n = c * h * w;
                let out_n = oc * oh * ow;
                let (gw, rest) = grads.split_at_mut(1);
                for b in 0..batch {
                    geom.backward(
                        &x.data[b * in_n..(b + 1) * in_n],
                        &self.params[0],
                        &grad_out.data[b * out_n..(b + 1) * out_n],
                        &mut gw[0],
                        &mut rest[0],
                        &mut grad_in.data[b * in_n..(b + 1) * in_n],
                    );
                }
            }
            (
                LayerSpec::BatchNorm,
                Cache::Norm {
                    xhat,
                    inv_std,
                    batch: batch_stats,
                },
            ) => {
                let spatial = h * w;
                let n = (batch * spatial) as f64;
                let gamma = &self.params[0];
                for ch in 0..c {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for b in 0..batch {
                        let off = (b * c + ch) * spatial;
                        for i in off..off + spatial {
                            sum_g += grad_out.data[i];
                            sum_gx += grad_out.data[i] * xhat.data[i];
                        }
                    }
                    grads[0][ch] += sum_gx;
                    grads[1][ch] += sum_g;
                    let k = gamma[ch] * inv_std[ch];
                    for b in 0..batch {
                        let off = (b * c + ch) * spatial;
                        for i in off..off + spatial {
                            grad_in.data[i] = if *batch_stats {
                                k * (grad_out.data[i] - sum_g / n - xhat.data[i] * sum_gx / n)
                            } else {
                                k * grad_out.data[i]
                            };
                        }
                    }
                }
            }
            (LayerSpec::Relu, Cache::Output(out)) => {
                for ((gi, &g), &o) in grad_in.data.iter_mut().zip(&grad_out.data).zip(&out.data) {
                    *gi = if o > 0.0 { g } else { 0.0 };
                }
            }
            (LayerSpec::MaxPool { .. }, Cache::Argmax(argmax)) => {
                for (&g, &at) in grad_out.data.iter().zip(argmax) {
                    grad_in.data[at as usize] += g;
                }
            }
            (LayerSpec::GlobalAvgPool, Cache::Nothing) => {
                let spatial = h * w;
                for (plane, &g) in grad_in.data.chunks_mut(spatial).zip(&grad_out.data) {
                    plane.iter_mut().for_each(|v| *v = g / spatial as f64);
                }
            }
            (LayerSpec::Dense { out_features }, Cache::Input(x)) => {
                let in_n = c * h * w;
                let weight = &self.params[0];
                for b in 0..batch {
                    let xin = x.item(b);
                    let gin = &mut grad_in.data[b * in_n..(b + 1) * in_n];
                    for o in 0..out_features {
                        let g = grad_out.data[b * out_features + o];
                        grads[1][o] += g;
                        let gw = &mut grads[0][o * in_n..(o + 1) * in_n];
                        for (gw, &xi) in gw.iter_mut().zip(xin) {
                            *gw += g * xi;
                        }
                        for (gi, &wv) in gin.iter_mut().zip(&weight[o * in_n..(o + 1) * in_n]) {
                            *gi += g * wv;
                        }
                    }
                }
            }
            (spec, _) => {
                return Err(Error::Shape(format!("cache does not belong to layer {spec}")));
            }
        }
        Ok(grad_in)
    }
}

fn channel_iter(
    data: &[f64],
    batch: usize,
    c: usize,
    spatial: usize,
    ch: usize,
) -> impl Iterator<Item = f64> + Clone + '_ {
    (0..batch).flat_map(move |b| {
        let off = (b * c + ch) * spatial;
        data[off..off + spatial].iter().copied()
    })
}

#[allow(clippy::too_many_arguments)]
fn normalize(
    x: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    xhat: &mut Tensor,
    out: &mut Tensor,
    c: usize,
    spatial: usize,
) {
    for (plane_idx, ((xs, xh), ys)) in x
        .data
        .chunks(spatial)
        .zip(xhat.data.chunks_mut(spatial))
        .zip(out.data.chunks_mut(spatial))
        .enumerate()
    {
        let ch = plane_idx % c;
        for ((&v, xh), y) in xs.iter().zip(xh.iter_mut()).zip(ys.iter_mut()) {
            *xh = (v - mean[ch]) * inv_std[ch];
            *y = gamma[ch] * *xh + beta[ch];
        }
    }
}

/// Geometry of one convolution applied to a single batch item.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

/// Output positions `[lo, hi)` whose tap `k` lands inside an input of length `len`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if len + pad <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

impl ConvGeometry {
    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.c_in + ic) * self.kh + ky) * self.kw + kx
    }

    fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let s = self.stride;
        for oc in 0..self.c_out {
            let plane = &mut out[oc * self.oh * self.ow..(oc + 1) * self.oh * self.ow];
            plane.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..self.c_in {
                let in_plane = &input[ic * self.h * self.w..(ic + 1) * self.h * self.w];
                for ky in 0..self.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, self.pad_h, s, self.h, self.oh);
                    for kx in 0..self.kw {
                        let (ox_lo, ox_hi) = valid_range(kx, self.pad_w, s, self.w, self.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let wv = weight[self.weight_index(oc, ic, ky, kx)];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - self.pad_h;
                            let in_row = &in_plane[iy * self.w..(iy + 1) * self.w];
                            let out_row = &mut plane[oy * self.ow..(oy + 1) * self.ow];
                            let ix0 = ox_lo * s + kx - self.pad_w;
                            if s == 1 {
                                let src = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                                for (o, &i) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                for (n, o) in out_row[ox_lo..ox_hi].iter_mut().enumerate() {
                                    *o += wv * in_row[ix0 + n * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let s = self.stride;
        for oc in 0..self.c_out {
            let g_plane = &grad_out[oc * self.oh * self.ow..(oc + 1) * self.oh * self.ow];
            grad_b[oc] += g_plane.iter().sum::<f64>();
            for ic in 0..self.c_in {
                let in_off = ic * self.h * self.w;
                for ky in 0..self.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, self.pad_h, s, self.h, self.oh);
                    for kx in 0..self.kw {
                        let (ox_lo, ox_hi) = valid_range(kx, self.pad_w, s, self.w, self.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let wi = self.weight_index(oc, ic, ky, kx);
                        let wv = weight[wi];
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - self.pad_h;
                            let row = in_off + iy * self.w;
                            let g_row = &g_plane[oy * self.ow..(oy + 1) * self.ow];
                            let ix0 = ox_lo * s + kx - self.pad_w;
                            if s == 1 {
                                let n = ox_hi - ox_lo;
                                let src = &input[row + ix0..row + ix0 + n];
                                let dst = &mut grad_in[row + ix0..row + ix0 + n];
                                for ((&g, &i), d) in g_row[ox_lo..ox_hi].iter().zip(src).zip(dst) {
                                    acc += g * i;
                                    *d += wv * g;
                                }
                            } else {
                                for (n, &g) in g_row[ox_lo..ox_hi].iter().enumerate() {
                                    let ix = row + ix0 + n * s;
                                    acc += g * input[ix];
                                    grad_in[ix] += wv * g;
                                }
                            }
                        }
                        grad_w[wi] += acc;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of one `[C_in, H, W]` input with a `[C_out, C_in, k, k]`
/// kernel, symmetric zero padding `pad`.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor> {
    let mismatch = || {
        Error::Shape(format!(
            "input {:?} incompatible with kernel {:?} and {} biases",
            x.shape,
            kernel.shape,
            bias.len()
        ))
    };
    let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (x.shape.as_slice(), kernel.shape.as_slice()) else {
        return Err(mismatch());
    };
    if kc != c_in || bias.len() != c_out || stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(mismatch());
    }
    let geom = ConvGeometry {
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        stride,
        pad_h: pad,
        pad_w: pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    };
    let mut out = Tensor::zeros(vec![c_out, geom.oh, geom.ow]);
    geom.forward(&x.data, &kernel.data, bias, &mut out.data);
    Ok(out)
}

/// Numerically stable softmax and cross-entropy of one logit vector.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let loss = sum.ln() - (logits[label] - max);
    (loss, probs)
}
