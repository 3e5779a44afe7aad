//! Standard, grouped, depthwise and dilated 2-D convolution.
//!
//! All kernels use cross-correlation orientation (no kernel flip) and zero
//! padding. Output sizes follow
//! `H' = floor((H + 2*pad - dilation*(Hk - 1) - 1) / stride) + 1`.
//!
//! Accumulation order for one output element is fixed: the bias (or zero),
//! then input channels of the group in ascending order, then kernel rows,
//! then kernel columns. Padding taps are skipped. Because a depthwise
//! convolution is the `groups == channels` case of the same loop nest, the
//! depthwise and grouped paths agree bitwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Work (in MACs) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Hyper-parameters of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub bias: bool,
}

fn one() -> usize {
    1
}

impl ConvSpec {
    /// Square `k x k` convolution, stride 1, no padding, no bias.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            bias: false,
        }
    }

    /// Depthwise `k x k` convolution over `channels` channels.
    pub fn depthwise(channels: usize, k: usize) -> Self {
        ConvSpec {
            groups: channels,
            ..ConvSpec::new(channels, channels, k)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// Padding that keeps the spatial size at stride 1 for odd kernels.
    pub fn same_padding(mut self) -> Self {
        self.padding = self.dilation * (self.kernel_h - 1) / 2;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.groups == 0 || self.stride == 0 || self.dilation == 0 {
            return bad(format!("groups, stride and dilation must be >= 1 in {self:?}"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return bad(format!("empty kernel in {self:?}"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!("zero channels in {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_per_group(), self.kernel_h, self.kernel_w)
    }

    /// Learnable parameters: `Cy * (Cx / groups) * Hk * Wk` plus `Cy` for bias.
    pub fn param_count(&self) -> u64 {
        let w = self.weight_shape().numel() as u64;
        w + if self.bias { self.out_channels as u64 } else { 0 }
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_len(
            "conv2d",
            "height",
            h,
            self.kernel_h,
            self.stride,
            self.padding,
            self.dilation,
        )?;
        let ow = out_len(
            "conv2d",
            "width",
            w,
            self.kernel_w,
            self.stride,
            self.padding,
            self.dilation,
        )?;
        Ok((oh, ow))
    }

    /// Multiply-accumulates for one batch item producing an `oh x ow` map,
    /// counting every kernel tap including those that land on padding.
    pub fn macs(&self, oh: usize, ow: usize) -> u64 {
        (oh * ow) as u64
            * self.out_channels as u64
            * (self.kernel_h * self.kernel_w) as u64
            * self.in_per_group() as u64
    }
}

fn out_len(
    op: &'static str,
    dim: &'static str,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Result<usize> {
    let span = (dil * (k - 1) + 1) as i64;
    let numer = len as i64 + 2 * pad as i64 - span;
    if numer < 0 {
        return Err(Error::NonPositiveOutput {
            op,
            dim,
            value: numer.div_euclid(stride as i64) + 1,
        });
    }
    Ok((numer / stride as i64) as usize + 1)
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + offset` falls
/// inside `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
    let last = len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

struct Geometry {
    spec: ConvSpec,
    in_shape: Shape,
    oh: usize,
    ow: usize,
}

impl Geometry {
    #[inline]
    fn tap_offset(&self, k: usize) -> isize {
        (k * self.spec.dilation) as isize - self.spec.padding as isize
    }
}

fn check(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let s = input.shape();
    if s.c != spec.in_channels {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: spec.in_channels,
            got: s.c,
        });
    }
    let ws = spec.weight_shape();
    if weight.shape() != ws {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            left: ws,
            right: weight.shape(),
        });
    }
    match (bias, spec.bias) {
        (Some(b), _) if b.numel() != spec.out_channels => {
            return Err(Error::DimMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: spec.out_channels,
                got: b.numel(),
            })
        }
        (None, true) => {
            return Err(Error::InvalidSpec("conv2d: spec requires a bias tensor".into()));
        }
        _ => {}
    }
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    Ok(Geometry {
        spec: *spec,
        in_shape: s,
        oh,
        ow,
    })
}

/// Computes one output plane `(n, oc)` in the documented accumulation order.
fn forward_plane(out: &mut [f32], input: &Tensor, weight: &[f32], bias: f32, n: usize, oc: usize, g: &Geometry) {
    let spec = &g.spec;
    let (h, w) = (g.in_shape.h, g.in_shape.w);
    let (kh_n, kw_n) = (spec.kernel_h, spec.kernel_w);
    let cin_g = spec.in_per_group();
    let group = oc / spec.out_per_group();
    out.fill(bias);
    for icg in 0..cin_g {
        let in_plane = input.plane(n, group * cin_g + icg);
        let wbase = (oc * cin_g + icg) * kh_n * kw_n;
        for kh in 0..kh_n {
            let off_h = g.tap_offset(kh);
            let (oh_lo, oh_hi) = valid_range(off_h, spec.stride, h, g.oh);
            for kw in 0..kw_n {
                let wv = weight[wbase + kh * kw_n + kw];
                let off_w = g.tap_offset(kw);
                let (ow_lo, ow_hi) = valid_range(off_w, spec.stride, w, g.ow);
                if ow_lo >= ow_hi {
                    continue;
                }
                for oh in oh_lo..oh_hi {
                    let ih = (oh * spec.stride) as isize + off_h;
                    let in_row = &in_plane[ih as usize * w..(ih as usize + 1) * w];
                    let out_row = &mut out[oh * g.ow + ow_lo..oh * g.ow + ow_hi];
                    if spec.stride == 1 {
                        let start = (ow_lo as isize + off_w) as usize;
                        let src = &in_row[start..start + out_row.len()];
                        for (o, &x) in out_row.iter_mut().zip(src) {
                            *o += wv * x;
                        }
                    } else {
                        for (j, o) in out_row.iter_mut().enumerate() {
                            let iw = ((ow_lo + j) * spec.stride) as isize + off_w;
                            *o += wv * in_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
}

fn run_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: &Geometry) -> Tensor {
    let spec = &g.spec;
    let out_shape = Shape::new(g.in_shape.n, spec.out_channels, g.oh, g.ow);
    let plane = g.oh * g.ow;
    let mut data = vec![0.0f32; out_shape.numel()];
    if plane == 0 {
        return Tensor::from_parts(out_shape, data);
    }
    let wdata = weight.data();
    let bdata = bias.map(|b| b.data());
    let job = |(idx, out): (usize, &mut [f32])| {
        let (n, oc) = (idx / spec.out_channels, idx % spec.out_channels);
        let b = bdata.map_or(0.0, |b| b[oc]);
        forward_plane(out, input, wdata, b, n, oc, g);
    };
    let work = spec.macs(g.oh, g.ow) as usize * g.in_shape.n;
    if work >= PAR_THRESHOLD {
        data.par_chunks_mut(plane).enumerate().for_each(job);
    } else {
        data.chunks_mut(plane).enumerate().for_each(job);
    }
    Tensor::from_parts(out_shape, data)
}

/// General (grouped, strided, dilated) 2-D convolution.
///
/// `weight` has shape `(Cy, Cx / groups, Hk, Wk)`; `bias`, when present, has
/// `Cy` elements.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let g = check(input, weight, bias, spec)?;
    Ok(run_forward(input, weight, bias, &g))
}

/// Per-channel convolution: output channel `c` reads only input channel `c`.
/// `weight` has shape `(C, 1, Hk, Wk)`.
pub fn depthwise_conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.is_depthwise() {
        return Err(Error::InvalidSpec(format!(
            "depthwise_conv2d requires groups == in == out channels, got {}->{} groups {}",
            spec.in_channels, spec.out_channels, spec.groups
        )));
    }
    conv2d(input, weight, bias, spec)
}

/// Reference convolution that counts one MAC per visited kernel tap
/// (including padding taps) in its innermost loop. Much slower than
/// [`conv2d`]; used to check analytical cost formulas against execution.
pub fn conv2d_counted(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<(Tensor, u64)> {
    let g = check(input, weight, bias, spec)?;
    let s = g.in_shape;
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let out_shape = Shape::new(s.n, spec.out_channels, g.oh, g.ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut macs = 0u64;
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            let group = oc / cout_g;
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                    for icg in 0..cin_g {
                        let ic = group * cin_g + icg;
                        for kh in 0..spec.kernel_h {
                            for kw in 0..spec.kernel_w {
                                macs += 1;
                                let ih = (oh * spec.stride) as isize + g.tap_offset(kh);
                                let iw = (ow * spec.stride) as isize + g.tap_offset(kw);
                                if ih < 0 || iw < 0 || ih >= s.h as isize || iw >= s.w as isize {
                                    continue;
                                }
                                acc += weight.at(oc, icg, kh, kw) * input.at(n, ic, ih as usize, iw as usize);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok((Tensor::from_parts(out_shape, out), macs))
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Dot product with eight interleaved partial sums; the order is fixed for a
/// given length.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn sum_f32(a: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.chunks_exact(8);
    let rest = chunks.remainder();
    for x in chunks {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    let tail: f32 = rest.iter().sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Reverse-mode gradients of [`conv2d`] given the upstream gradient.
pub fn conv2d_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let bias_stub;
    let bias_ref = if spec.bias {
        bias_stub = Tensor::zeros([1, spec.out_channels, 1, 1]);
        Some(&bias_stub)
    } else {
        None
    };
    let g = check(input, weight, bias_ref, spec)?;
    let s = g.in_shape;
    let out_shape = Shape::new(s.n, spec.out_channels, g.oh, g.ow);
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: out_shape,
            right: grad_out.shape(),
        });
    }
    let work = spec.macs(g.oh, g.ow) as usize * s.n;
    let grad_input = input_grad(weight, grad_out, &g, work >= PAR_THRESHOLD);
    let grad_weight = weight_grad(input, grad_out, &g, work >= PAR_THRESHOLD);
    let grad_bias = spec.bias.then(|| {
        let plane = g.oh * g.ow;
        let v = (0..spec.out_channels)
            .map(|oc| {
                (0..s.n)
                    .map(|n| {
                        let start = (n * spec.out_channels + oc) * plane;
                        sum_f32(&grad_out.data()[start..start + plane])
                    })
                    .sum::<f32>()
            })
            .collect();
        Tensor::from_parts(Shape::new(1, spec.out_channels, 1, 1), v)
    });
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

fn input_grad(weight: &Tensor, grad_out: &Tensor, g: &Geometry, parallel: bool) -> Tensor {
    let spec = &g.spec;
    let s = g.in_shape;
    let (kh_n, kw_n) = (spec.kernel_h, spec.kernel_w);
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let plane = s.h * s.w;
    let mut data = vec![0.0f32; s.numel()];
    if plane == 0 {
        return Tensor::from_parts(s, data);
    }
    let wdata = weight.data();
    let job = |(idx, gin): (usize, &mut [f32])| {
        let (n, ic) = (idx / s.c, idx % s.c);
        let group = ic / cin_g;
        let icg = ic % cin_g;
        for oc in group * cout_g..(group + 1) * cout_g {
            let gout = grad_out.plane(n, oc);
            let wbase = (oc * cin_g + icg) * kh_n * kw_n;
            for kh in 0..kh_n {
                let off_h = g.tap_offset(kh);
                let (oh_lo, oh_hi) = valid_range(off_h, spec.stride, s.h, g.oh);
                for kw in 0..kw_n {
                    let wv = wdata[wbase + kh * kw_n + kw];
                    let off_w = g.tap_offset(kw);
                    let (ow_lo, ow_hi) = valid_range(off_w, spec.stride, s.w, g.ow);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * spec.stride) as isize + off_h) as usize;
                        let grow = &gout[oh * g.ow + ow_lo..oh * g.ow + ow_hi];
                        let irow = &mut gin[ih * s.w..(ih + 1) * s.w];
                        if spec.stride == 1 {
                            let start = (ow_lo as isize + off_w) as usize;
                            for (d, &go) in irow[start..start + grow.len()].iter_mut().zip(grow) {
                                *d += wv * go;
                            }
                        } else {
                            for (j, &go) in grow.iter().enumerate() {
                                let iw = ((ow_lo + j) * spec.stride) as isize + off_w;
                                irow[iw as usize] += wv * go;
                            }
                        }
                    }
                }
            }
        }
    };
    if parallel {
        data.par_chunks_mut(plane).enumerate().for_each(job);
    } else {
        data.chunks_mut(plane).enumerate().for_each(job);
    }
    Tensor::from_parts(s, data)
}

fn weight_grad(input: &Tensor, grad_out: &Tensor, g: &Geometry, parallel: bool) -> Tensor {
    let spec = &g.spec;
    let s = g.in_shape;
    let (kh_n, kw_n) = (spec.kernel_h, spec.kernel_w);
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let per_oc = cin_g * kh_n * kw_n;
    let ws = spec.weight_shape();
    let mut data = vec![0.0f32; ws.numel()];
    let job = |(oc, gw): (usize, &mut [f32])| {
        let group = oc / cout_g;
        for icg in 0..cin_g {
            let ic = group * cin_g + icg;
            for kh in 0..kh_n {
                let off_h = g.tap_offset(kh);
                let (oh_lo, oh_hi) = valid_range(off_h, spec.stride, s.h, g.oh);
                for kw in 0..kw_n {
                    let off_w = g.tap_offset(kw);
                    let (ow_lo, ow_hi) = valid_range(off_w, spec.stride, s.w, g.ow);
                    let mut acc = 0.0f32;
                    if ow_lo < ow_hi {
                        for n in 0..s.n {
                            let gout = grad_out.plane(n, oc);
                            let inp = input.plane(n, ic);
                            for oh in oh_lo..oh_hi {
                                let ih = ((oh * spec.stride) as isize + off_h) as usize;
                                let grow = &gout[oh * g.ow + ow_lo..oh * g.ow + ow_hi];
                                let irow = &inp[ih * s.w..(ih + 1) * s.w];
                                if spec.stride == 1 {
                                    let start = (ow_lo as isize + off_w) as usize;
                                    acc += dot(grow, &irow[start..start + grow.len()]);
                                } else {
                                    let mut r = 0.0f32;
                                    for (j, &go) in grow.iter().enumerate() {
                                        let iw = ((ow_lo + j) * spec.stride) as isize + off_w;
                                        r += go * irow[iw as usize];
                                    }
                                    acc += r;
                                }
                            }
                        }
                    }
                    gw[(icg * kh_n + kh) * kw_n + kw] = acc;
                }
            }
        }
    };
    if parallel {
        data.par_chunks_mut(per_oc).enumerate().for_each(job);
    } else {
        data.chunks_mut(per_oc).enumerate().for_each(job);
    }
    Tensor::from_parts(ws, data)
}
