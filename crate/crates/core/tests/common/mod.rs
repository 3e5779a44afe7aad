//! Helpers shared by the integration tests.
#![allow(dead_code)]

use lsnet_core::arch::{BackboneSpec, FpnSpec, FpnVariant, Mode, Session};
use lsnet_core::ops::Activation;
use lsnet_core::{ConvSpec, Graph, LsNet, ModelSpec, NodeId, Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1)` and random sign, so kinks at zero sit
/// well outside the finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1f32..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn tiny_spec(variant: FpnVariant) -> ModelSpec {
    ModelSpec {
        backbone: BackboneSpec::with_channels([1, 1, 1, 1], [8, 16, 16, 16], 4),
        fpn: FpnSpec {
            variant,
            fusion_channels: [4, 4, 4, 8],
        },
    }
}

pub fn image(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    uniform(rng, Shape::new(n, 3, size, size), 0.0, 1.0)
}

pub type Kernel = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

fn weighted_sum(out: &Tensor, r: &Tensor) -> f64 {
    out.data()
        .iter()
        .zip(r.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Largest `max|fd - analytic| / max|analytic|` over all inputs of `f`, for
/// the scalar `sum(f(inputs) * r)` with a random fixed `r`.
pub fn kernel_error(inputs: &[Tensor], f: &Kernel, h: f32, seed: u64) -> f64 {
    let run = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &ids).expect("kernel runs");
        (g, ids, out)
    };
    let (mut g, ids, out) = run(inputs);
    let r = uniform(&mut rng(seed), g.shape(out), -1.0, 1.0);
    let mut grads = g.backward(out, r.clone()).expect("backward");
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.take(*id);
        let mut diff = 0.0f64;
        for i in 0..inputs[k].numel() {
            let eval = |delta: f32| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] += delta;
                let (g, _, out) = run(&xs);
                (weighted_sum(g.value(out), &r), xs[k].data()[i])
            };
            let (lp, xp) = eval(h);
            let (lm, xm) = eval(-h);
            let fd = (lp - lm) / (xp - xm) as f64;
            diff = diff.max((fd - analytic.data()[i] as f64).abs());
        }
        let scale = analytic.max_abs() as f64;
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        } else {
            worst = worst.max(diff);
        }
    }
    worst
}

pub type InputGen = dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>;

/// A kernel under test with its random input generator.
pub struct KernelCase {
    pub name: &'static str,
    pub inputs: Box<InputGen>,
    pub run: Box<Kernel>,
}

fn conv_case(name: &'static str, spec: ConvSpec, hw: usize) -> KernelCase {
    KernelCase {
        name,
        inputs: Box::new(move |r| {
            let mut v = vec![
                uniform(r, Shape::new(2, spec.in_channels, hw, hw), -1.0, 1.0),
                uniform(r, spec.weight_shape(), -1.0, 1.0),
            ];
            if spec.bias {
                v.push(uniform(r, Shape::new(1, spec.out_channels, 1, 1), -1.0, 1.0));
            }
            v
        }),
        run: Box::new(move |g, ids| g.conv2d(ids[0], ids[1], ids.get(2).copied(), &spec)),
    }
}

fn bn_case(name: &'static str, training: bool) -> KernelCase {
    KernelCase {
        name,
        inputs: Box::new(|r| {
            vec![
                uniform(r, Shape::new(2, 3, 4, 4), -2.0, 2.0),
                uniform(r, Shape::new(1, 3, 1, 1), 0.5, 1.5),
                uniform(r, Shape::new(1, 3, 1, 1), -1.0, 1.0),
            ]
        }),
        run: Box::new(move |g, ids| {
            let mean = Tensor::vector(vec![0.1, -0.2, 0.3]);
            let var = Tensor::vector(vec![0.5, 1.0, 2.0]);
            Ok(g.batch_norm(ids[0], ids[1], ids[2], &mean, &var, training)?.0)
        }),
    }
}

fn unary(name: &'static str, shape: Shape, run: Box<Kernel>) -> KernelCase {
    KernelCase {
        name,
        inputs: Box::new(move |r| vec![away_from_zero(r, shape)]),
        run,
    }
}

/// Every differentiable kernel of the graph, including the main
/// convolution configurations.
pub fn kernel_cases() -> Vec<KernelCase> {
    let s = Shape::new(2, 3, 4, 4);
    vec![
        conv_case("conv 3x3", ConvSpec::new(3, 4, 3).with_padding(1), 5),
        conv_case("conv 1x1 bias", ConvSpec::new(3, 2, 1).with_bias(true), 4),
        conv_case("conv strided", ConvSpec::new(2, 3, 3).with_stride(2).with_padding(1), 6),
        conv_case(
            "conv dilated",
            ConvSpec::new(2, 2, 3).with_dilation(2).with_padding(2),
            6,
        ),
        conv_case("conv grouped", ConvSpec::new(4, 4, 3).with_groups(2).with_padding(1), 4),
        conv_case("conv depthwise", ConvSpec::depthwise(3, 3).with_padding(1), 5),
        conv_case(
            "conv depthwise dilated",
            ConvSpec::depthwise(3, 3)
                .with_dilation(2)
                .with_padding(2)
                .with_bias(true),
            6,
        ),
        bn_case("batch_norm train", true),
        bn_case("batch_norm eval", false),
        unary("relu", s, Box::new(|g, ids| Ok(g.activation(ids[0], Activation::Relu)))),
        unary(
            "leaky",
            s,
            Box::new(|g, ids| Ok(g.activation(ids[0], Activation::Prelu(0.25)))),
        ),
        unary(
            "sigmoid",
            s,
            Box::new(|g, ids| Ok(g.activation(ids[0], Activation::Sigmoid))),
        ),
        KernelCase {
            name: "prelu",
            inputs: Box::new(move |r| vec![away_from_zero(r, s), uniform(r, Shape::new(1, 3, 1, 1), 0.0, 0.5)]),
            run: Box::new(|g, ids| g.prelu(ids[0], ids[1])),
        },
        unary("global_avg_pool", s, Box::new(|g, ids| g.global_avg_pool(ids[0]))),
        unary("avg_pool2", s, Box::new(|g, ids| g.avg_pool2(ids[0]))),
        unary(
            "upsample x2",
            Shape::new(2, 2, 3, 3),
            Box::new(|g, ids| g.upsample(ids[0], 2)),
        ),
        unary(
            "upsample x4",
            Shape::new(1, 2, 2, 3),
            Box::new(|g, ids| g.upsample(ids[0], 4)),
        ),
        KernelCase {
            name: "concat",
            inputs: Box::new(|r| {
                vec![
                    uniform(r, Shape::new(2, 2, 3, 3), -1.0, 1.0),
                    uniform(r, Shape::new(2, 1, 3, 3), -1.0, 1.0),
                    uniform(r, Shape::new(2, 3, 3, 3), -1.0, 1.0),
                ]
            }),
            run: Box::new(|g, ids| g.concat(ids)),
        },
        KernelCase {
            name: "abs_diff",
            inputs: Box::new(move |r| {
                let a = uniform(r, s, -1.0, 1.0);
                let d = away_from_zero(r, s);
                let b = Tensor::from_fn(s, |n, c, y, x| a.at(n, c, y, x) + d.at(n, c, y, x));
                vec![a, b]
            }),
            run: Box::new(|g, ids| g.abs_diff(ids[0], ids[1])),
        },
        KernelCase {
            name: "add",
            inputs: Box::new(move |r| vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)]),
            run: Box::new(|g, ids| g.add(ids[0], ids[1])),
        },
        KernelCase {
            name: "channel_gate",
            inputs: Box::new(move |r| vec![uniform(r, s, -1.0, 1.0), uniform(r, Shape::new(2, 3, 1, 1), 0.0, 1.0)]),
            run: Box::new(|g, ids| g.channel_gate(ids[0], ids[1])),
        },
    ]
}

pub const KERNEL_TRIALS: u64 = 20;
pub const KERNEL_STEP: f32 = 1e-2;

/// Worst relative error of `case` over [`KERNEL_TRIALS`] random draws.
pub fn kernel_case_error(case: &KernelCase) -> f64 {
    (0..KERNEL_TRIALS)
        .map(|t| {
            let mut r = rng(1000 + t);
            let inputs = (case.inputs)(&mut r);
            kernel_error(&inputs, &*case.run, KERNEL_STEP, 2000 + t)
        })
        .fold(0.0, f64::max)
}

/// Finite-difference steps tried per element in the end-to-end check. For
/// each step the central, forward and backward quotients are formed and the
/// smallest error is kept: PReLU and `|a - b|` kinks often sit within a step
/// of the sample point on one side, and small steps drown in `f32` rounding.
pub const MODEL_STEPS: [f32; 4] = [1e-2, 3e-3, 1e-3, 3e-4];

/// Floor for [`worst_relative`]: gradients smaller than this fraction of the
/// model-wide maximum are compared on that scale instead of their own.
pub const MODEL_FLOOR: f64 = 1e-2;

/// Per-tensor result of [`model_error`].
#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_analytic: f64,
    pub max_diff: f64,
}

/// Relative error of each tensor, normalized by its own largest gradient
/// but never by less than `floor_ratio` times the largest gradient anywhere
/// in the model. Returns the worst `(name, error)`.
pub fn worst_relative(checks: &[TensorCheck], floor_ratio: f64) -> (String, f64) {
    let global = checks.iter().map(|c| c.max_analytic).fold(0.0, f64::max);
    let floor = (global * floor_ratio).max(f64::MIN_POSITIVE);
    checks
        .iter()
        .map(|c| (c.name.clone(), c.max_diff / c.max_analytic.max(floor)))
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

/// End-to-end check: BCE loss of the whole model against a fixed mask, for
/// up to `per_tensor` sampled elements of every trainable tensor and of both
/// input images.
pub fn model_error(model: &LsNet, mode: Mode, batch: usize, size: usize, per_tensor: usize) -> Vec<TensorCheck> {
    use lsnet_core::train::bce_loss;
    let mut r = rng(77);
    let t1 = image(&mut r, batch, size);
    let t2 = image(&mut r, batch, size);
    let mask = Tensor::from_fn(
        Shape::new(batch, 1, size, size),
        |_, _, y, x| if x > y { 1.0 } else { 0.0 },
    );

    let loss_of = |m: &LsNet, a: &Tensor, b: &Tensor| {
        let mut s = Session::new(&m.params, mode);
        let out = m.forward(&mut s, a, b).expect("forward");
        bce_loss(s.graph.value(out.head.prob), &mask).expect("loss").0
    };

    let mut s = Session::new(&model.params, mode);
    let out = model.forward(&mut s, &t1, &t2).expect("forward");
    let (_, seed) = bce_loss(s.graph.value(out.head.prob), &mask).expect("loss");
    let leaves: Vec<_> = model
        .params
        .ids()
        .filter(|&id| model.params.entry(id).trainable)
        .map(|id| (id, s.param_node(id).expect("every trainable tensor is used")))
        .collect();
    let (n1, n2) = (out.t1, out.t2);
    let mut g = s.graph.backward(out.head.prob, seed).expect("backward");

    let pick = |numel: usize, r: &mut ChaCha8Rng| -> Vec<usize> {
        if numel <= per_tensor {
            (0..numel).collect()
        } else {
            (0..per_tensor).map(|_| r.gen_range(0..numel)).collect()
        }
    };
    // `probe(d)` returns the loss and the actual perturbed value.
    let best_diff = |analytic: f64, probe: &dyn Fn(f32) -> (f64, f32)| {
        let (l0, x0) = probe(0.0);
        MODEL_STEPS
            .iter()
            .flat_map(|&h| {
                let ((lp, xp), (lm, xm)) = (probe(h), probe(-h));
                [
                    (lp - lm) / (xp - xm) as f64,
                    (lp - l0) / (xp - x0) as f64,
                    (l0 - lm) / (x0 - xm) as f64,
                ]
            })
            .map(|fd| (fd - analytic).abs())
            .fold(f64::INFINITY, f64::min)
    };

    let mut checks = Vec::new();
    for (id, node) in leaves {
        let analytic = g.take(node);
        let mut diff = 0.0f64;
        for i in pick(analytic.numel(), &mut r) {
            let probe = |d: f32| {
                let mut m = model.clone();
                m.params.tensor_mut(id).data_mut()[i] += d;
                let x = m.params.get(id).data()[i];
                (loss_of(&m, &t1, &t2), x)
            };
            diff = diff.max(best_diff(analytic.data()[i] as f64, &probe));
        }
        checks.push(TensorCheck {
            name: model.params.entry(id).name.clone(),
            max_analytic: analytic.max_abs() as f64,
            max_diff: diff,
        });
    }
    for (which, node) in [("input t1", n1), ("input t2", n2)] {
        let analytic = g.take(node);
        let mut diff = 0.0f64;
        for i in pick(analytic.numel(), &mut r) {
            let probe = |d: f32| {
                let (mut a, mut b) = (t1.clone(), t2.clone());
                let t = if which == "input t1" { &mut a } else { &mut b };
                t.data_mut()[i] += d;
                let x = t.data()[i];
                (loss_of(model, &a, &b), x)
            };
            diff = diff.max(best_diff(analytic.data()[i] as f64, &probe));
        }
        checks.push(TensorCheck {
            name: which.to_string(),
            max_analytic: analytic.max_abs() as f64,
            max_diff: diff,
        });
    }
    checks
}
