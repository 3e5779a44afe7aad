//! Recorded forward execution with a reverse-mode backward pass.
//!
//! A [`Graph`] is an append-only list of nodes. Each kernel call evaluates
//! eagerly, stores its result, and remembers which nodes it read. Calling
//! [`Graph::backward`] walks the list in reverse once and returns a
//! gradient for every node, leaves included.

use std::collections::BTreeMap;

use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::ops::{self, Activation, BatchNormParams};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Tensor,
        inv_std: Vec<f32>,
        training: bool,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Prelu {
        input: NodeId,
        slope: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    AvgPool2 {
        input: NodeId,
    },
    Upsample {
        input: NodeId,
        scale: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    AbsDiff {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ChannelGate {
        input: NodeId,
        gate: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Execution trace. See the module docs.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    scope: String,
    mac_counts: Option<BTreeMap<String, u64>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose convolutions run through [`conv::conv2d_counted`] and
    /// tally MACs per scope label.
    pub fn instrumented() -> Self {
        Graph {
            mac_counts: Some(BTreeMap::new()),
            ..Self::default()
        }
    }

    /// Label attached to MAC counts of subsequently recorded convolutions.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Counted MACs by scope, when instrumented.
    pub fn mac_counts(&self) -> Option<&BTreeMap<String, u64>> {
        self.mac_counts.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, spec: &ConvSpec) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = bias.map(|b| self.value(b));
        let (out, macs) = if self.mac_counts.is_some() {
            let (out, macs) = conv::conv2d_counted(x, w, b, spec)?;
            (out, Some(macs))
        } else {
            (conv::conv2d(x, w, b, spec)?, None)
        };
        if let (Some(counts), Some(macs)) = (self.mac_counts.as_mut(), macs) {
            *counts.entry(self.scope.clone()).or_default() += macs;
        }
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                spec: *spec,
            },
        ))
    }

    /// Batch norm with `gamma`/`beta` as graph nodes and running statistics as
    /// plain tensors. Returns updated running statistics in training mode.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor,
        running_var: &Tensor,
        training: bool,
    ) -> Result<(NodeId, Option<(Tensor, Tensor)>)> {
        let out = ops::batch_norm(
            self.value(input),
            BatchNormParams {
                gamma: self.value(gamma),
                beta: self.value(beta),
                running_mean,
                running_var,
            },
            ops::BN_EPS,
            training,
        )?;
        let id = self.push(
            out.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized: out.normalized,
                inv_std: out.inv_std,
                training,
            },
        );
        Ok((id, out.running))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let out = ops::activation(self.value(input), kind);
        self.push(out, Op::Activation { input, kind })
    }

    pub fn prelu(&mut self, input: NodeId, slope: NodeId) -> Result<NodeId> {
        let out = ops::prelu_channels(self.value(input), self.value(slope))?;
        Ok(self.push(out, Op::Prelu { input, slope }))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool { input }))
    }

    pub fn avg_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::avg_pool2(self.value(input))?;
        Ok(self.push(out, Op::AvgPool2 { input }))
    }

    pub fn upsample(&mut self, input: NodeId, scale: usize) -> Result<NodeId> {
        let out = ops::upsample_bilinear(self.value(input), scale)?;
        Ok(self.push(out, Op::Upsample { input, scale }))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::abs_diff(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::AbsDiff { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn channel_gate(&mut self, input: NodeId, gate: NodeId) -> Result<NodeId> {
        let out = ops::channel_gate(self.value(input), self.value(gate))?;
        Ok(self.push(out, Op::ChannelGate { input, gate }))
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back through the trace. A graph can be differentiated once.
    pub fn backward(&mut self, output: NodeId, seed: Tensor) -> Result<Grad> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let out_shape = self.shape(output);
        if seed.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                left: out_shape,
                right: seed.shape(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |id: NodeId| &self.nodes[id.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let cg = conv::conv2d_backward(val(*input), val(*weight), &g, spec)?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *weight, cg.weight);
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        let shape = val(*b).shape();
                        accumulate(&mut grads, *b, gb.reshape(shape)?);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    training,
                } => {
                    let (dx, dg, db) = ops::batch_norm_backward(&g, normalized, inv_std, val(*gamma), *training);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gamma, dg.reshape(val(*gamma).shape())?);
                    accumulate(&mut grads, *beta, db.reshape(val(*beta).shape())?);
                }
                Op::Activation { input, kind } => {
                    let dx = ops::activation_backward(&g, val(*input), &node.value, *kind);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Prelu { input, slope } => {
                    let (dx, da) = ops::prelu_channels_backward(&g, val(*input), val(*slope));
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *slope, da.reshape(val(*slope).shape())?);
                }
                Op::GlobalAvgPool { input } => {
                    let dx = ops::global_avg_pool_backward(&g, val(*input).shape());
                    accumulate(&mut grads, *input, dx);
                }
                Op::AvgPool2 { input } => {
                    let dx = ops::avg_pool2_backward(&g, val(*input).shape());
                    accumulate(&mut grads, *input, dx);
                }
                Op::Upsample { input, scale } => {
                    let dx = ops::upsample_bilinear_backward(&g, val(*input).shape(), *scale);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat { inputs } => {
                    let channels: Vec<usize> = inputs.iter().map(|&id| val(id).shape().c).collect();
                    for (&id, part) in inputs.iter().zip(ops::split_channels(&g, &channels)?) {
                        accumulate(&mut grads, id, part);
                    }
                }
                Op::AbsDiff { a, b } => {
                    let (da, db) = ops::abs_diff_backward(&g, val(*a), val(*b));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::ChannelGate { input, gate } => {
                    let (dx, dz) = ops::channel_gate_backward(&g, val(*input), val(*gate));
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gate, dz);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Grad { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar with respect to the leaves of a [`Graph`].
#[derive(Debug)]
pub struct Grad {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Grad {
    /// Gradient of a leaf node, or `None` if the output does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf node with zeros for unreachable leaves.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.0]))
    }
}
