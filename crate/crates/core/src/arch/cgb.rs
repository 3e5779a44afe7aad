//! Context-guided block.
//!
//! ```text
//! x -> reduce (conv+BN+PReLU, C/2) -+-> depthwise 3x3 (dilation 1) --+
//!                                   +-> depthwise 3x3 (dilation r) --+-> concat (C) -> BN -> PReLU = y
//! z = sigmoid(W2 relu(W1 mean_hw(y) + b1) + b2)       (W1: C -> C/r, W2: C/r -> C)
//! out = y * z  (+ x for residual blocks)
//! ```

use rand::Rng;

use super::layers::{BatchNorm, Conv, ConvBnPrelu, Prelu};
use super::params::Builder;
use super::session::Session;
use super::spec::CgbSpec;
use crate::autograd::NodeId;
use crate::error::{Error, Result};
use crate::ops::Activation;

#[derive(Clone, Debug)]
pub struct Cgb {
    pub spec: CgbSpec,
    pub reduce: ConvBnPrelu,
    pub local: Conv,
    pub surround: Conv,
    pub joint_bn: BatchNorm,
    pub joint_act: Prelu,
    pub gate: Option<(Conv, Conv)>,
}

impl Cgb {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, name: &str, spec: CgbSpec) -> Result<Self> {
        spec.validate()?;
        let gate = match spec.gate_convs() {
            Some((fc1, fc2)) => Some((
                Conv::build(b, &format!("{name}.gate.fc1"), fc1)?,
                Conv::build(b, &format!("{name}.gate.fc2"), fc2)?,
            )),
            None => None,
        };
        Ok(Cgb {
            spec,
            reduce: ConvBnPrelu::build(b, &format!("{name}.reduce"), spec.reduce_conv())?,
            local: Conv::build(b, &format!("{name}.local"), spec.local_conv())?,
            surround: Conv::build(b, &format!("{name}.surround"), spec.surround_conv())?,
            joint_bn: BatchNorm::build(b, &format!("{name}.joint.bn"), spec.channels)?,
            joint_act: Prelu::build(b, &format!("{name}.joint.act"), spec.channels)?,
            gate,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<NodeId> {
        let c_in = s.graph.shape(x).c;
        if c_in != self.spec.in_channels {
            return Err(Error::DimMismatch {
                op: "cgb",
                dim: "input channels",
                expected: self.spec.in_channels,
                got: c_in,
            });
        }
        let r = self.reduce.forward(s, x)?;
        let local = self.local.forward(s, r)?;
        let surround = self.surround.forward(s, r)?;
        let joint = s.graph.concat(&[local, surround])?;
        let y = self.joint_bn.forward(s, joint)?;
        let y = self.joint_act.forward(s, y)?;
        let z = context_gate(s, y, self.gate.as_ref())?;
        let out = s.graph.channel_gate(y, z)?;
        if self.spec.downsample {
            Ok(out)
        } else {
            s.graph.add(out, x)
        }
    }
}

/// Global-context gate `sigmoid(f(mean_hw(y)))`, shape `(n, c, 1, 1)`. With
/// no bottleneck, `f` is the identity.
pub fn context_gate(s: &mut Session<'_>, y: NodeId, bottleneck: Option<&(Conv, Conv)>) -> Result<NodeId> {
    let pooled = s.graph.global_avg_pool(y)?;
    let logits = match bottleneck {
        Some((fc1, fc2)) => {
            let h = fc1.forward(s, pooled)?;
            let h = s.graph.activation(h, Activation::Relu);
            fc2.forward(s, h)?
        }
        None => pooled,
    };
    Ok(s.graph.activation(logits, Activation::Sigmoid))
}
