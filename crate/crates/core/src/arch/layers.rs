//! Parameter handles for the basic layers and their forward recording.

use rand::Rng;

use super::params::{Builder, ParamId};
use super::session::Session;
use crate::autograd::NodeId;
use crate::conv::ConvSpec;
use crate::error::Result;
use crate::tensor::Shape;

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let weight = b.kaiming(format!("{name}.weight"), spec.weight_shape())?;
        let bias = if spec.bias {
            Some(b.constant(
                format!("{name}.bias"),
                Shape::new(1, spec.out_channels, 1, 1),
                0.0,
                true,
            )?)
        } else {
            None
        };
        Ok(Conv { spec, weight, bias })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<NodeId> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, &self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1);
        Ok(BatchNorm {
            gamma: b.constant(format!("{name}.gamma"), shape, 1.0, true)?,
            beta: b.constant(format!("{name}.beta"), shape, 0.0, true)?,
            running_mean: b.constant(format!("{name}.running_mean"), shape, 0.0, false)?,
            running_var: b.constant(format!("{name}.running_var"), shape, 1.0, false)?,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<NodeId> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let mean = s.running(self.running_mean);
        let var = s.running(self.running_var);
        let training = s.training();
        let (y, running) = s.graph.batch_norm(x, gamma, beta, &mean, &var, training)?;
        if let Some((m, v)) = running {
            s.set_running(self.running_mean, m);
            s.set_running(self.running_var, v);
        }
        Ok(y)
    }
}

/// PReLU with a learnable per-channel slope (initialised to 0.25).
#[derive(Clone, Debug)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, name: &str, channels: usize) -> Result<Self> {
        Ok(Prelu {
            slope: b.constant(format!("{name}.slope"), Shape::new(1, channels, 1, 1), 0.25, true)?,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<NodeId> {
        let a = s.param(self.slope);
        s.graph.prelu(x, a)
    }
}

/// Convolution followed by batch norm and PReLU.
#[derive(Clone, Debug)]
pub struct ConvBnPrelu {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Prelu,
}

impl ConvBnPrelu {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, name: &str, spec: ConvSpec) -> Result<Self> {
        Ok(ConvBnPrelu {
            conv: Conv::build(b, &format!("{name}.conv"), spec)?,
            bn: BatchNorm::build(b, &format!("{name}.bn"), spec.out_channels)?,
            act: Prelu::build(b, &format!("{name}.act"), spec.out_channels)?,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        self.act.forward(s, y)
    }
}
