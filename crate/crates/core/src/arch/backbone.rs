use rand::Rng;

use super::cgb::Cgb;
use super::layers::ConvBnPrelu;
use super::params::Builder;
use super::session::Session;
use super::spec::{BackboneSpec, LEVELS};
use crate::autograd::NodeId;
use crate::error::{Error, Result};

/// Per-stage features of one temporal stream, strides 2/4/8/16.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub levels: [NodeId; LEVELS],
}

/// Light-Siamese backbone: a stride-2 stem followed by four CGB stages. One
/// instance (one parameter set) serves both temporal streams.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub stem: ConvBnPrelu,
    pub stages: Vec<Vec<Cgb>>,
}

pub(crate) fn stem_scope() -> String {
    "backbone.stem".to_string()
}

pub(crate) fn stage_scope(s: usize) -> String {
    format!("backbone.stage{s}")
}

impl Backbone {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let stem = ConvBnPrelu::build(b, "backbone.stem", spec.stem)?;
        let stages = (0..LEVELS)
            .map(|s| {
                spec.stage_cgbs(s)
                    .into_iter()
                    .enumerate()
                    .map(|(i, cgb)| Cgb::build(b, &format!("backbone.stage{s}.block{i}"), cgb))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Backbone {
            spec: spec.clone(),
            stem,
            stages,
        })
    }

    /// Runs one stream. `x` must have 3 channels.
    pub fn forward(&self, s: &mut Session<'_>, x: NodeId) -> Result<FeaturePyramid> {
        let c = s.graph.shape(x).c;
        if c != 3 {
            return Err(Error::DimMismatch {
                op: "backbone",
                dim: "input channels",
                expected: 3,
                got: c,
            });
        }
        s.graph.set_scope(stem_scope());
        let mut h = self.stem.forward(s, x)?;
        let mut levels = [h; LEVELS];
        for (i, stage) in self.stages.iter().enumerate() {
            s.graph.set_scope(stage_scope(i));
            for block in stage {
                h = block.forward(s, h)?;
            }
            levels[i] = h;
        }
        Ok(FeaturePyramid { levels })
    }

    /// Runs both streams through the same weights.
    pub fn forward_pair(
        &self,
        s: &mut Session<'_>,
        t1: NodeId,
        t2: NodeId,
    ) -> Result<(FeaturePyramid, FeaturePyramid)> {
        let (a, b) = (s.graph.shape(t1), s.graph.shape(t2));
        if a != b {
            return Err(Error::ShapeMismatch {
                op: "backbone t1/t2",
                left: a,
                right: b,
            });
        }
        Ok((self.forward(s, t1)?, self.forward(s, t2)?))
    }
}
