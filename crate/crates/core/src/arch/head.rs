use rand::Rng;

use super::layers::Conv;
use super::params::Builder;
use super::session::Session;
use crate::autograd::NodeId;
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::ops::Activation;

pub(crate) fn head_scope() -> String {
    "head".to_string()
}

/// Prediction head: the three fused outputs are brought to stride 2,
/// concatenated, projected to one channel by a 1x1 conv, squashed by a
/// sigmoid and upsampled by 2 to the input resolution.
#[derive(Clone, Debug)]
pub struct Head {
    pub conv: Conv,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Stride-2 logits.
    pub logits: NodeId,
    /// Change probability at input resolution, `(n, 1, H, W)`.
    pub prob: NodeId,
}

impl Head {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, in_channels: usize) -> Result<Self> {
        let spec = ConvSpec::new(in_channels, 1, 1).with_bias(true);
        Ok(Head {
            conv: Conv::build(b, "head.conv", spec)?,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, outputs: [NodeId; 3]) -> Result<HeadOutput> {
        s.graph.set_scope(head_scope());
        let target = s.graph.shape(outputs[0]);
        let mut parts = Vec::with_capacity(3);
        for &x in &outputs {
            let shape = s.graph.shape(x);
            if shape.h == target.h && shape.w == target.w {
                parts.push(x);
                continue;
            }
            let scale = target.h / shape.h.max(1);
            if scale * shape.h != target.h || scale * shape.w != target.w || !scale.is_power_of_two() {
                return Err(Error::ShapeMismatch {
                    op: "head",
                    left: target,
                    right: shape,
                });
            }
            parts.push(s.graph.upsample(x, scale)?);
        }
        let cat = s.graph.concat(&parts)?;
        let logits = self.conv.forward(s, cat)?;
        let p = s.graph.activation(logits, Activation::Sigmoid);
        let prob = s.graph.upsample(p, 2)?;
        Ok(HeadOutput { logits, prob })
    }
}
