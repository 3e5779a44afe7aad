use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{Backbone, FeaturePyramid};
use super::fpn::{Fpn, FpnOutputs};
use super::head::{Head, HeadOutput};
use super::params::{Builder, ParamStore};
use super::session::{Mode, Session};
use super::spec::{ModelSpec, LEVELS};
use crate::autograd::NodeId;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The full change-detection network with its parameters.
#[derive(Clone, Debug)]
pub struct LsNet {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub head: Head,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub t1: NodeId,
    pub t2: NodeId,
    pub pyramids: (FeaturePyramid, FeaturePyramid),
    pub fpn: FpnOutputs,
    pub head: HeadOutput,
}

impl LsNet {
    /// Builds a freshly initialised model. Identical seeds give identical
    /// weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let backbone = Backbone::build(&mut b, &spec.backbone)?;
        let fpn = Fpn::build(&mut b, &spec)?;
        let head_in: usize = fpn
            .topology
            .outputs
            .iter()
            .map(|&o| spec.fpn.fusion_channels[fpn.topology.nodes[o].level])
            .sum();
        let head = Head::build(&mut b, head_in)?;
        Ok(LsNet {
            spec,
            params: store,
            backbone,
            fpn,
            head,
        })
    }

    /// Builds the structure for `spec` and replaces its parameters by
    /// `params`, which must hold exactly the same names and shapes.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let mut model = LsNet::new(spec, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, got) in model.params.entries().iter().zip(params.entries()) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} {} does not match {} {}",
                    got.name,
                    got.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.entries().iter().map(|e| e.tensor.numel()).sum()
    }

    fn check_pair(&self, t1: &Tensor, t2: &Tensor) -> Result<()> {
        if t1.shape() != t2.shape() {
            return Err(Error::ShapeMismatch {
                op: "lsnet t1/t2",
                left: t1.shape(),
                right: t2.shape(),
            });
        }
        self.spec.check_input(t1.shape().h, t1.shape().w)
    }

    /// Records a full forward pass into `s`.
    pub fn forward(&self, s: &mut Session<'_>, t1: &Tensor, t2: &Tensor) -> Result<ForwardOutput> {
        self.check_pair(t1, t2)?;
        let n1 = s.graph.leaf(t1.clone());
        let n2 = s.graph.leaf(t2.clone());
        let pyramids = self.backbone.forward_pair(s, n1, n2)?;
        let fpn = self.fpn.forward(s, &pyramids.0, &pyramids.1)?;
        let head = self.head.forward(s, [fpn.d00, fpn.d10, fpn.d20])?;
        Ok(ForwardOutput {
            t1: n1,
            t2: n2,
            pyramids,
            fpn,
            head,
        })
    }

    /// Change probability map `(n, 1, H, W)` using running BN statistics.
    pub fn predict(&self, t1: &Tensor, t2: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.params, Mode::Eval);
        let out = self.forward(&mut s, t1, t2)?;
        Ok(s.graph.value(out.head.prob).clone())
    }

    /// Backbone pyramids of both streams as plain tensors (eval mode).
    pub fn backbone_forward(&self, t1: &Tensor, t2: &Tensor) -> Result<([Tensor; LEVELS], [Tensor; LEVELS])> {
        if t1.shape() != t2.shape() {
            return Err(Error::ShapeMismatch {
                op: "backbone t1/t2",
                left: t1.shape(),
                right: t2.shape(),
            });
        }
        let mut s = Session::new(&self.params, Mode::Eval);
        let n1 = s.graph.leaf(t1.clone());
        let n2 = s.graph.leaf(t2.clone());
        let (p1, p2) = self.backbone.forward_pair(&mut s, n1, n2)?;
        let get = |p: &FeaturePyramid| p.levels.map(|id| s.graph.value(id).clone());
        Ok((get(&p1), get(&p2)))
    }

    /// Writes running-statistic updates from a training session back into
    /// the parameter store.
    pub fn commit_running(&mut self, updates: Vec<(super::params::ParamId, Tensor)>) {
        for (id, t) in updates {
            self.params.set(id, t);
        }
    }
}
