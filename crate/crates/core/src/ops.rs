//! Non-convolution kernels and their gradients.

use rayon::prelude::*;

use crate::conv::{dot, sum_f32};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Default batch-norm epsilon.
pub const BN_EPS: f32 = 1e-5;
/// Default weight of the current batch in running-statistic updates.
pub const BN_MOMENTUM: f32 = 0.1;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn channel_len(op: &'static str, what: &'static str, t: &Tensor, c: usize) -> Result<()> {
    if t.numel() != c {
        return Err(Error::DimMismatch {
            op,
            dim: what,
            expected: c,
            got: t.numel(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel affine parameters and running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput {
    pub output: Tensor,
    /// Normalized input `(x - mean) * inv_std`, kept for the backward pass.
    pub normalized: Tensor,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<f32>,
    /// Updated `(running_mean, running_var)` in training mode.
    pub running: Option<(Tensor, Tensor)>,
}

/// Batch normalization over (n, h, w) per channel.
///
/// Training mode normalizes with the biased batch variance and returns the
/// running statistics blended by [`BN_MOMENTUM`] (the running variance uses
/// the unbiased estimate). Eval mode uses the running statistics.
pub fn batch_norm(input: &Tensor, p: BatchNormParams<'_>, eps: f32, training: bool) -> Result<BatchNormOutput> {
    let s = input.shape();
    for (t, what) in [
        (p.gamma, "gamma length"),
        (p.beta, "beta length"),
        (p.running_mean, "running_mean length"),
        (p.running_var, "running_var length"),
    ] {
        channel_len("batch_norm", what, t, s.c)?;
    }
    let plane = s.plane();
    let count = s.n * plane;
    if training && count == 0 {
        return Err(Error::EmptySpatial { op: "batch_norm" });
    }
    let mut mean = vec![0.0f32; s.c];
    let mut var = vec![0.0f32; s.c];
    let mut running = None;
    if training {
        let stats: Vec<(f64, f64)> = (0..s.c)
            .into_par_iter()
            .map(|c| {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
                }
                let m = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input.plane(n, c).iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                }
                (m, sq)
            })
            .collect();
        let mut rm = Vec::with_capacity(s.c);
        let mut rv = Vec::with_capacity(s.c);
        for (c, &(m, sq)) in stats.iter().enumerate() {
            mean[c] = m as f32;
            var[c] = (sq / count as f64) as f32;
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { sq };
            rm.push((1.0 - BN_MOMENTUM) * p.running_mean.data()[c] + BN_MOMENTUM * m as f32);
            rv.push((1.0 - BN_MOMENTUM) * p.running_var.data()[c] + BN_MOMENTUM * unbiased as f32);
        }
        running = Some((
            Tensor::from_parts(p.running_mean.shape(), rm),
            Tensor::from_parts(p.running_var.shape(), rv),
        ));
    } else {
        mean.copy_from_slice(p.running_mean.data());
        var.copy_from_slice(p.running_var.data());
    }
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0f32; s.numel()];
    let mut output = vec![0.0f32; s.numel()];
    if plane > 0 {
        normalized
            .par_chunks_mut(plane)
            .zip(output.par_chunks_mut(plane))
            .enumerate()
            .for_each(|(idx, (xh, out))| {
                let (n, c) = (idx / s.c, idx % s.c);
                let (m, is) = (mean[c], inv_std[c]);
                let (g, b) = (p.gamma.data()[c], p.beta.data()[c]);
                for ((xh, o), &x) in xh.iter_mut().zip(out.iter_mut()).zip(input.plane(n, c)) {
                    *xh = (x - m) * is;
                    *o = g * *xh + b;
                }
            });
    }
    Ok(BatchNormOutput {
        output: Tensor::from_parts(s, output),
        normalized: Tensor::from_parts(s, normalized),
        inv_std,
        running,
    })
}

/// Gradients of [`batch_norm`] with respect to input, gamma and beta.
pub fn batch_norm_backward(
    grad_out: &Tensor,
    normalized: &Tensor,
    inv_std: &[f32],
    gamma: &Tensor,
    training: bool,
) -> (Tensor, Tensor, Tensor) {
    let s = grad_out.shape();
    let count = (s.n * s.plane()) as f32;
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    for c in 0..s.c {
        let (mut dg, mut db) = (0.0f32, 0.0f32);
        for n in 0..s.n {
            dg += dot(grad_out.plane(n, c), normalized.plane(n, c));
            db += sum_f32(grad_out.plane(n, c));
        }
        dgamma[c] = dg;
        dbeta[c] = db;
    }
    let plane = s.plane();
    let mut dx = vec![0.0f32; s.numel()];
    if plane > 0 {
        dx.par_chunks_mut(plane).enumerate().for_each(|(idx, d)| {
            let (n, c) = (idx / s.c, idx % s.c);
            let k = gamma.data()[c] * inv_std[c];
            let go = grad_out.plane(n, c);
            if training {
                let xh = normalized.plane(n, c);
                let (mg, mb) = (dgamma[c] / count, dbeta[c] / count);
                for ((d, &g), &x) in d.iter_mut().zip(go).zip(xh) {
                    *d = k * (g - mb - x * mg);
                }
            } else {
                for (d, &g) in d.iter_mut().zip(go) {
                    *d = k * g;
                }
            }
        });
    }
    let cs = Shape::new(1, s.c, 1, 1);
    (
        Tensor::from_parts(s, dx),
        Tensor::from_parts(cs, dgamma),
        Tensor::from_parts(cs, dbeta),
    )
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with a fixed negative slope.
    Prelu(f32),
    Sigmoid,
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where `f32` would round to an endpoint.
#[inline]
pub fn sigmoid(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Prelu(a) => input.map(|v| if v > 0.0 { v } else { a * v }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Gradient of [`activation`]; `output` is the forward result.
pub fn activation_backward(grad_out: &Tensor, input: &Tensor, output: &Tensor, kind: Activation) -> Tensor {
    let data = match kind {
        Activation::Relu => grad_out
            .data()
            .iter()
            .zip(input.data())
            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Prelu(a) => grad_out
            .data()
            .iter()
            .zip(input.data())
            .map(|(&g, &x)| if x > 0.0 { g } else { a * g })
            .collect(),
        Activation::Sigmoid => grad_out
            .data()
            .iter()
            .zip(output.data())
            .map(|(&g, &y)| g * y * (1.0 - y))
            .collect(),
    };
    Tensor::from_parts(grad_out.shape(), data)
}

/// PReLU with one learnable slope per channel.
pub fn prelu_channels(input: &Tensor, slope: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    channel_len("prelu", "slope length", slope, s.c)?;
    let plane = s.plane();
    let mut out = input.clone();
    if plane > 0 {
        for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let a = slope.data()[idx % s.c];
            for v in chunk {
                if *v <= 0.0 {
                    *v *= a;
                }
            }
        }
    }
    Ok(out)
}

pub fn prelu_channels_backward(grad_out: &Tensor, input: &Tensor, slope: &Tensor) -> (Tensor, Tensor) {
    let s = input.shape();
    let plane = s.plane();
    let mut dx = grad_out.clone();
    let mut da = vec![0.0f32; s.c];
    if plane > 0 {
        for (idx, (d, x)) in dx
            .data_mut()
            .chunks_mut(plane)
            .zip(input.data().chunks(plane))
            .enumerate()
        {
            let c = idx % s.c;
            let a = slope.data()[c];
            let mut acc = 0.0f32;
            for (d, &x) in d.iter_mut().zip(x) {
                if x <= 0.0 {
                    acc += *d * x;
                    *d *= a;
                }
            }
            da[c] += acc;
        }
    }
    (dx, Tensor::from_parts(Shape::new(1, s.c, 1, 1), da))
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

/// Mean over the spatial extent, `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let plane = s.plane();
    if plane == 0 {
        return Err(Error::EmptySpatial { op: "global_avg_pool" });
    }
    let scale = 1.0 / plane as f64;
    let data = input
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() * scale) as f32)
        .collect();
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data))
}

pub fn global_avg_pool_backward(grad_out: &Tensor, in_shape: Shape) -> Tensor {
    let plane = in_shape.plane();
    let scale = 1.0 / plane as f32;
    let mut data = Vec::with_capacity(in_shape.numel());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::from_parts(in_shape, data)
}

/// Non-overlapping `2 x 2` average pooling. Height and width must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidSpec(format!(
            "avg_pool2 needs even spatial dims, got {s}"
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = s.with_hw(oh, ow);
    let mut data = Vec::with_capacity(out_shape.numel());
    for p in input.data().chunks(s.plane()) {
        for y in 0..oh {
            let r0 = &p[2 * y * s.w..(2 * y + 1) * s.w];
            let r1 = &p[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
            for x in 0..ow {
                data.push(0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1])));
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

pub fn avg_pool2_backward(grad_out: &Tensor, in_shape: Shape) -> Tensor {
    let (oh, ow) = (in_shape.h / 2, in_shape.w / 2);
    let mut data = vec![0.0f32; in_shape.numel()];
    for (p, g) in data.chunks_mut(in_shape.plane()).zip(grad_out.data().chunks(oh * ow)) {
        for y in 0..oh {
            for x in 0..ow {
                let v = 0.25 * g[y * ow + x];
                p[2 * y * in_shape.w + 2 * x] = v;
                p[2 * y * in_shape.w + 2 * x + 1] = v;
                p[(2 * y + 1) * in_shape.w + 2 * x] = v;
                p[(2 * y + 1) * in_shape.w + 2 * x + 1] = v;
            }
        }
    }
    Tensor::from_parts(in_shape, data)
}

/// Source taps for one output coordinate of an align-corners=false bilinear
/// resize: `(i0, i1, w1)` with value `(1 - w1) * x[i0] + w1 * x[i1]`.
fn bilinear_taps(out_len: usize, in_len: usize, scale: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = if i1 == i0 { 0.0 } else { (src - i0 as f64) as f32 };
            (i0, i1, w1)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor with the align-corners=false
/// convention: output pixel centres map to `(o + 0.5) / scale - 0.5` in input
/// coordinates, clamped to the border.
pub fn upsample_bilinear(input: &Tensor, scale: usize) -> Result<Tensor> {
    if scale < 2 {
        return Err(Error::InvalidSpec(format!("upsample scale must be >= 2, got {scale}")));
    }
    let s = input.shape();
    if s.plane() == 0 {
        return Err(Error::EmptySpatial {
            op: "upsample_bilinear",
        });
    }
    let (oh, ow) = (s.h * scale, s.w * scale);
    let ty = bilinear_taps(oh, s.h, scale);
    let tx = bilinear_taps(ow, s.w, scale);
    let out_shape = s.with_hw(oh, ow);
    let mut data = vec![0.0f32; out_shape.numel()];
    data.par_chunks_mut(oh * ow)
        .zip(input.data().par_chunks(s.plane()))
        .for_each(|(out, p)| {
            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                let r0 = &p[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &p[y1 * s.w..(y1 + 1) * s.w];
                for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = (1.0 - wx) * r0[x0] + wx * r0[x1];
                    let bot = (1.0 - wx) * r1[x0] + wx * r1[x1];
                    out[y * ow + x] = (1.0 - wy) * top + wy * bot;
                }
            }
        });
    Ok(Tensor::from_parts(out_shape, data))
}

pub fn upsample_bilinear_backward(grad_out: &Tensor, in_shape: Shape, scale: usize) -> Tensor {
    let (oh, ow) = (in_shape.h * scale, in_shape.w * scale);
    let ty = bilinear_taps(oh, in_shape.h, scale);
    let tx = bilinear_taps(ow, in_shape.w, scale);
    let w = in_shape.w;
    let mut data = vec![0.0f32; in_shape.numel()];
    data.par_chunks_mut(in_shape.plane())
        .zip(grad_out.data().par_chunks(oh * ow))
        .for_each(|(d, g)| {
            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let v = g[y * ow + x];
                    let top = (1.0 - wy) * v;
                    let bot = wy * v;
                    d[y0 * w + x0] += (1.0 - wx) * top;
                    d[y0 * w + x1] += wx * top;
                    d[y1 * w + x0] += (1.0 - wx) * bot;
                    d[y1 * w + x1] += wx * bot;
                }
            }
        });
    Tensor::from_parts(in_shape, data)
}

// ---------------------------------------------------------------------------
// Structural and elementwise ops
// ---------------------------------------------------------------------------

/// Concatenates along the channel axis, preserving input order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidSpec("concat of zero tensors".into()))?
        .shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first,
                right: s,
            });
        }
        c_total += s.c;
    }
    let out_shape = first.with_c(c_total);
    let plane = first.plane();
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in inputs {
            let len = t.shape().c * plane;
            data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let t = grad.slice_channels(start, c);
            start += c;
            t
        })
        .collect()
}

pub fn abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("abs_diff", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    Ok(Tensor::from_parts(a.shape(), data))
}

/// Gradients of `|a - b|`; the subgradient at `a == b` is zero.
pub fn abs_diff_backward(grad_out: &Tensor, a: &Tensor, b: &Tensor) -> (Tensor, Tensor) {
    let da: Vec<f32> = grad_out
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&g, (&x, &y))| {
            if x > y {
                g
            } else if x < y {
                -g
            } else {
                0.0
            }
        })
        .collect();
    let db = da.iter().map(|v| -v).collect();
    (Tensor::from_parts(a.shape(), da), Tensor::from_parts(a.shape(), db))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape(), data))
}

/// Scales every `(n, c)` plane of `input` by `gate[n, c]`; `gate` has shape
/// `(n, c, 1, 1)`.
pub fn channel_gate(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let expected = Shape::new(s.n, s.c, 1, 1);
    if gate.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "channel_gate",
            left: expected,
            right: gate.shape(),
        });
    }
    let mut out = input.clone();
    let plane = s.plane();
    if plane > 0 {
        for (chunk, &z) in out.data_mut().chunks_mut(plane).zip(gate.data()) {
            for v in chunk {
                *v *= z;
            }
        }
    }
    Ok(out)
}

pub fn channel_gate_backward(grad_out: &Tensor, input: &Tensor, gate: &Tensor) -> (Tensor, Tensor) {
    let s = input.shape();
    let plane = s.plane();
    let mut dx = grad_out.clone();
    let mut dz = vec![0.0f32; s.n * s.c];
    if plane > 0 {
        for (i, (d, x)) in dx
            .data_mut()
            .chunks_mut(plane)
            .zip(input.data().chunks(plane))
            .enumerate()
        {
            dz[i] = dot(d, x);
            let z = gate.data()[i];
            for v in d {
                *v *= z;
            }
        }
    }
    (dx, Tensor::from_parts(gate.shape(), dz))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn_params(c: usize, gamma: f32, beta: f32) -> [Tensor; 4] {
        [
            Tensor::full([1, c, 1, 1], gamma),
            Tensor::full([1, c, 1, 1], beta),
            Tensor::zeros([1, c, 1, 1]),
            Tensor::full([1, c, 1, 1], 1.0),
        ]
    }

    fn p(t: &[Tensor; 4]) -> BatchNormParams<'_> {
        BatchNormParams {
            gamma: &t[0],
            beta: &t[1],
            running_mean: &t[2],
            running_var: &t[3],
        }
    }

    fn ramp(shape: [usize; 4]) -> Tensor {
        let mut k = 0u32;
        Tensor::from_fn(shape, |_, c, _, _| {
            k = k.wrapping_mul(1103515245).wrapping_add(12345);
            ((k >> 16) % 1000) as f32 / 250.0 - 2.0 + c as f32
        })
    }

    #[test]
    fn bn_eval_with_unit_stats_is_near_identity() {
        let x = ramp([2, 3, 4, 4]);
        let params = bn_params(3, 1.0, 0.0);
        let y = batch_norm(&x, p(&params), BN_EPS, false).unwrap().output;
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-6);
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn bn_training_standardizes_each_channel() {
        let x = ramp([3, 4, 5, 5]);
        let params = bn_params(4, 1.0, 0.0);
        let out = batch_norm(&x, p(&params), BN_EPS, true).unwrap();
        let y = out.output;
        for c in 0..4 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
        let (rm, rv) = out.running.unwrap();
        assert!(rm.data().iter().all(|v| v.is_finite()));
        assert!(rv.data().iter().all(|&v| v > 0.9 * 1.0 * (1.0 - BN_MOMENTUM)));
    }

    #[test]
    fn bn_affine_recomputes_as_two_xhat_plus_three() {
        let x = ramp([2, 2, 3, 3]);
        let unit = bn_params(2, 1.0, 0.0);
        let affine = bn_params(2, 2.0, 3.0);
        let xh = batch_norm(&x, p(&unit), BN_EPS, true).unwrap().output;
        let y = batch_norm(&x, p(&affine), BN_EPS, true).unwrap().output;
        for (a, b) in y.data().iter().zip(xh.data()) {
            assert!((a - (2.0 * b + 3.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn bn_rejects_channel_mismatch() {
        let params = bn_params(2, 1.0, 0.0);
        let err = batch_norm(&Tensor::zeros([1, 3, 2, 2]), p(&params), BN_EPS, false).unwrap_err();
        assert!(matches!(
            err,
            Error::DimMismatch {
                expected: 3,
                got: 2,
                ..
            }
        ));
    }

    #[test]
    fn activations_scalar_cases() {
        let x = Tensor::vector(vec![0.0, -3.2, 3.2, -4.0]);
        let s = activation(&x, Activation::Sigmoid);
        assert_eq!(s.data()[0], 0.5);
        let r = activation(&x, Activation::Relu);
        assert_eq!(&r.data()[1..3], &[0.0, 3.2]);
        let pr = activation(&x, Activation::Prelu(0.25));
        assert_eq!(pr.data()[3], -1.0);
        let big = activation(&Tensor::vector(vec![-80.0, 80.0, -15.0, 15.0]), Activation::Sigmoid);
        assert!(big.data().iter().all(|&v| v > 0.0 && v < 1.0), "{big:?}");
    }

    #[test]
    fn sigmoid_grad_at_zero_is_quarter() {
        let x = Tensor::vector(vec![0.0]);
        let y = activation(&x, Activation::Sigmoid);
        let g = activation_backward(&Tensor::vector(vec![1.0]), &x, &y, Activation::Sigmoid);
        assert_eq!(g.data()[0], 0.25);
    }

    #[test]
    fn global_pool_cases() {
        let t = Tensor::full([2, 64, 32, 32], 1.75);
        let g = global_avg_pool(&t).unwrap();
        assert_eq!(g.shape(), Shape::new(2, 64, 1, 1));
        assert!(g.data().iter().all(|&v| v == 1.75));
        let q = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&q).unwrap().data(), &[2.5]);
        assert!(global_avg_pool(&Tensor::zeros([1, 1, 0, 3])).is_err());
    }

    #[test]
    fn upsample_cases() {
        let c = Tensor::full([1, 2, 3, 2], 0.7);
        let u = upsample_bilinear(&c, 3).unwrap();
        assert_eq!(u.shape(), Shape::new(1, 2, 9, 6));
        assert!(u.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));

        let one = Tensor::full([1, 1, 1, 1], 4.5);
        assert_eq!(upsample_bilinear(&one, 2).unwrap().data(), &[4.5; 4]);

        let row = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let u = upsample_bilinear(&row, 2).unwrap();
        assert_eq!(u.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(&u.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&u.data()[4..], &[0.0, 0.25, 0.75, 1.0]);
        assert!(upsample_bilinear(&row, 1).is_err());
    }

    #[test]
    fn concat_and_diff() {
        let a = ramp([1, 2, 4, 4]);
        let b = ramp([1, 3, 4, 4]).map(|v| v + 1.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        let parts = split_channels(&c, &[2, 3]).unwrap();
        assert!(parts[0].bitwise_eq(&a) && parts[1].bitwise_eq(&b));
        assert!(concat_channels(&[&a, &Tensor::zeros([1, 1, 3, 4])]).is_err());

        assert!(abs_diff(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let x = Tensor::vector(vec![1.0, -2.0]);
        let y = Tensor::vector(vec![-1.0, 2.0]);
        assert_eq!(abs_diff(&x, &y).unwrap().data(), &[2.0, 4.0]);
        assert!(add(&x, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn avg_pool_halves() {
        let t = Tensor::new([1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(avg_pool2(&t).unwrap().data(), &[3.5, 5.5]);
        assert!(avg_pool2(&Tensor::zeros([1, 1, 3, 4])).is_err());
    }
}
