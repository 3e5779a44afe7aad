//! Siamese feature-pyramid fusion graphs.
//!
//! Both variants are expressed as an [`FpnTopology`]: a list of fusion nodes,
//! each reading backbone features `T[t][i]` (stream `t`, level `i`) or
//! earlier nodes. Level `i` has stride `2^(i+1)`. Inputs at a coarser level
//! are bilinearly upsampled to the node's level, finer ones are 2x2
//! average-pooled down.
//!
//! Dense (nested, every output re-reads the shallow features):
//!
//! ```text
//! d02 = f(T1_2, T2_2, T1_3, T2_3)          level 2
//! d01 = f(T1_1, T2_1, T1_2, T2_2)          level 1
//! d11 = f(T1_1, T2_1, d01, d02)            level 1
//! d00 = f(T1_0, T2_0, T1_1, T2_1)          level 0
//! d10 = f(T1_0, T2_0, d00, d01)            level 0
//! d20 = f(T1_0, T2_0, d00, d10, d11)       level 0
//! ```
//!
//! Diff (each backbone feature read once, differential column fused
//! coarse-to-fine, outputs fused fine-to-coarse):
//!
//! ```text
//! e_i = f(T1_i, T2_i, |T1_i - T2_i|)       i = 1, 2, 3
//! d11 = f(e2, e3)                          level 2
//! d01 = f(e1, d11)                         level 1
//! p01 = f(d01)                             level 1
//! d00 = f(T1_0, T2_0, p01)                 level 0
//! d10 = f(d00, d01)                        level 1
//! d20 = f(d10, d11)                        level 2
//! ```
//!
//! Every `f` is concat -> 3x3 conv -> BN -> PReLU with the level's fusion
//! width as output channels.

use rand::Rng;

use super::backbone::FeaturePyramid;
use super::layers::ConvBnPrelu;
use super::params::Builder;
use super::session::Session;
use super::spec::{FpnSpec, FpnVariant, ModelSpec, LEVELS};
use crate::autograd::NodeId;
use crate::conv::ConvSpec;
use crate::error::{Error, Result};

/// Where a fusion node reads one of its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    /// Backbone level `level` of stream `stream` (0 = T1, 1 = T2).
    Feature { stream: usize, level: usize },
    /// Output of an earlier node, by index.
    Node(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// concat(inputs) -> conv -> BN -> PReLU
    Fuse,
    /// concat(a, b, |a - b|) -> conv -> BN -> PReLU, for exactly two inputs.
    Difference,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionNode {
    pub name: &'static str,
    pub kind: NodeKind,
    pub level: usize,
    pub inputs: Vec<Source>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FpnTopology {
    pub nodes: Vec<FusionNode>,
    /// Indices of `d00`, `d10`, `d20`.
    pub outputs: [usize; 3],
}

fn t(stream: usize, level: usize) -> Source {
    Source::Feature { stream, level }
}

impl FpnTopology {
    pub fn new(variant: FpnVariant) -> Self {
        match variant {
            FpnVariant::Dense => Self::dense(),
            FpnVariant::Diff => Self::diff(),
        }
    }

    pub fn dense() -> Self {
        use NodeKind::Fuse;
        let node = |name, level, inputs| FusionNode {
            name,
            kind: Fuse,
            level,
            inputs,
        };
        let nodes = vec![
            node("d02", 2, vec![t(0, 2), t(1, 2), t(0, 3), t(1, 3)]),
            node("d01", 1, vec![t(0, 1), t(1, 1), t(0, 2), t(1, 2)]),
            node("d11", 1, vec![t(0, 1), t(1, 1), Source::Node(1), Source::Node(0)]),
            node("d00", 0, vec![t(0, 0), t(1, 0), t(0, 1), t(1, 1)]),
            node("d10", 0, vec![t(0, 0), t(1, 0), Source::Node(3), Source::Node(1)]),
            node(
                "d20",
                0,
                vec![t(0, 0), t(1, 0), Source::Node(3), Source::Node(4), Source::Node(2)],
            ),
        ];
        FpnTopology {
            nodes,
            outputs: [3, 4, 5],
        }
    }

    pub fn diff() -> Self {
        let node = |name, kind, level, inputs| FusionNode {
            name,
            kind,
            level,
            inputs,
        };
        use NodeKind::{Difference, Fuse};
        use Source::Node;
        let nodes = vec![
            node("e3", Difference, 3, vec![t(0, 3), t(1, 3)]),
            node("e2", Difference, 2, vec![t(0, 2), t(1, 2)]),
            node("e1", Difference, 1, vec![t(0, 1), t(1, 1)]),
            node("d11", Fuse, 2, vec![Node(1), Node(0)]),
            node("d01", Fuse, 1, vec![Node(2), Node(3)]),
            node("p01", Fuse, 1, vec![Node(4)]),
            node("d00", Fuse, 0, vec![t(0, 0), t(1, 0), Node(5)]),
            node("d10", Fuse, 1, vec![Node(6), Node(4)]),
            node("d20", Fuse, 2, vec![Node(7), Node(3)]),
        ];
        FpnTopology {
            nodes,
            outputs: [6, 7, 8],
        }
    }

    pub fn node(&self, name: &str) -> Option<&FusionNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Number of fusion nodes that read `source`.
    pub fn out_degree(&self, source: Source) -> usize {
        self.nodes.iter().filter(|n| n.inputs.contains(&source)).count()
    }

    /// Number of tensors concatenated by a node (the raw input count; a
    /// difference node concatenates its two inputs and their difference).
    pub fn arity(&self, name: &str) -> Option<usize> {
        self.node(name).map(|n| n.inputs.len())
    }

    /// Channels a node's conv reads: the sum over inputs (x1.5 for
    /// difference nodes).
    pub fn input_channels(&self, node: &FusionNode, spec: &ModelSpec) -> usize {
        let sum: usize = node.inputs.iter().map(|src| self.source_channels(*src, spec)).sum();
        match node.kind {
            NodeKind::Fuse => sum,
            NodeKind::Difference => sum + sum / 2,
        }
    }

    pub fn source_channels(&self, src: Source, spec: &ModelSpec) -> usize {
        match src {
            Source::Feature { level, .. } => spec.backbone.stage_channels[level],
            Source::Node(i) => spec.fpn.fusion_channels[self.nodes[i].level],
        }
    }

    pub fn source_level(&self, src: Source) -> usize {
        match src {
            Source::Feature { level, .. } => level,
            Source::Node(i) => self.nodes[i].level,
        }
    }

    pub fn conv_spec(&self, node: &FusionNode, spec: &ModelSpec) -> ConvSpec {
        ConvSpec::new(self.input_channels(node, spec), spec.fpn.fusion_channels[node.level], 3).with_padding(1)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.level >= LEVELS || n.inputs.is_empty() {
                return Err(Error::InvalidSpec(format!("fusion node {} is malformed", n.name)));
            }
            if n.kind == NodeKind::Difference && n.inputs.len() != 2 {
                return Err(Error::InvalidSpec(format!(
                    "difference node {} needs two inputs",
                    n.name
                )));
            }
            for src in &n.inputs {
                match *src {
                    Source::Node(j) if j >= i => {
                        return Err(Error::InvalidSpec(format!("node {} reads a later node", n.name)))
                    }
                    Source::Feature { stream, level } if stream > 1 || level >= LEVELS => {
                        return Err(Error::InvalidSpec(format!("node {} reads a missing feature", n.name)))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn node_scope(name: &str) -> String {
    format!("fpn.{name}")
}

/// Parameters of one FPN variant.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub spec: FpnSpec,
    pub topology: FpnTopology,
    pub convs: Vec<ConvBnPrelu>,
}

/// The three output nodes plus every intermediate node value.
#[derive(Clone, Debug)]
pub struct FpnOutputs {
    pub d00: NodeId,
    pub d10: NodeId,
    pub d20: NodeId,
    /// All node outputs in topology order.
    pub nodes: Vec<NodeId>,
    /// `|T1_i - T2_i|` tensors computed by difference nodes, by level.
    pub abs_diffs: Vec<(usize, NodeId)>,
}

impl Fpn {
    pub(crate) fn build<R: Rng>(b: &mut Builder<'_, R>, spec: &ModelSpec) -> Result<Self> {
        let topology = FpnTopology::new(spec.fpn.variant);
        topology.validate()?;
        let convs = topology
            .nodes
            .iter()
            .map(|n| ConvBnPrelu::build(b, &format!("fpn.{}", n.name), topology.conv_spec(n, spec)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Fpn {
            spec: spec.fpn.clone(),
            topology,
            convs,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, p1: &FeaturePyramid, p2: &FeaturePyramid) -> Result<FpnOutputs> {
        let mut values: Vec<NodeId> = Vec::with_capacity(self.topology.nodes.len());
        let mut abs_diffs = Vec::new();
        for (node, conv) in self.topology.nodes.iter().zip(&self.convs) {
            s.graph.set_scope(node_scope(node.name));
            let mut inputs = Vec::with_capacity(node.inputs.len() + 1);
            for &src in &node.inputs {
                let raw = match src {
                    Source::Feature { stream: 0, level } => p1.levels[level],
                    Source::Feature { level, .. } => p2.levels[level],
                    Source::Node(i) => values[i],
                };
                inputs.push(resample(s, raw, self.topology.source_level(src), node.level)?);
            }
            if node.kind == NodeKind::Difference {
                let d = s.graph.abs_diff(inputs[0], inputs[1])?;
                abs_diffs.push((node.level, d));
                inputs.push(d);
            }
            let cat = if inputs.len() == 1 {
                inputs[0]
            } else {
                s.graph.concat(&inputs)?
            };
            values.push(conv.forward(s, cat)?);
        }
        let [a, b, c] = self.topology.outputs;
        Ok(FpnOutputs {
            d00: values[a],
            d10: values[b],
            d20: values[c],
            nodes: values,
            abs_diffs,
        })
    }
}

/// Moves a tensor from pyramid level `from` to level `to`.
pub(crate) fn resample(s: &mut Session<'_>, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
    use std::cmp::Ordering;
    match from.cmp(&to) {
        Ordering::Equal => Ok(x),
        Ordering::Greater => s.graph.upsample(x, 1 << (from - to)),
        Ordering::Less => {
            let mut y = x;
            for _ in from..to {
                y = s.graph.avg_pool2(y)?;
            }
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_arity_and_redundancy() {
        let topo = FpnTopology::dense();
        topo.validate().unwrap();
        assert_eq!(topo.arity("d00"), Some(4));
        assert_eq!(topo.arity("d10"), Some(4));
        assert_eq!(topo.arity("d20"), Some(5));
        assert_eq!(topo.out_degree(t(0, 0)), 3);
        assert_eq!(topo.out_degree(t(1, 0)), 3);
        for &o in &topo.outputs {
            assert!(topo.nodes[o].inputs.contains(&t(0, 0)));
        }
    }

    #[test]
    fn diff_arity_and_single_use() {
        let topo = FpnTopology::diff();
        topo.validate().unwrap();
        assert_eq!(topo.arity("d00"), Some(3));
        assert_eq!(topo.arity("d10"), Some(2));
        assert_eq!(topo.arity("d20"), Some(2));
        for stream in 0..2 {
            for level in 0..LEVELS {
                assert_eq!(topo.out_degree(t(stream, level)), 1, "T{}_{level}", stream + 1);
            }
        }
        let levels: Vec<usize> = topo.outputs.iter().map(|&o| topo.nodes[o].level).collect();
        assert_eq!(levels, vec![0, 1, 2]);
    }

    /// Every output of the diff graph depends on all four backbone levels.
    #[test]
    fn diff_outputs_see_every_level() {
        let topo = FpnTopology::diff();
        fn reach(topo: &FpnTopology, i: usize, acc: &mut [bool; LEVELS]) {
            for src in &topo.nodes[i].inputs {
                match *src {
                    Source::Feature { level, .. } => acc[level] = true,
                    Source::Node(j) => reach(topo, j, acc),
                }
            }
        }
        for &o in &topo.outputs {
            let mut acc = [false; LEVELS];
            reach(&topo, o, &mut acc);
            assert_eq!(acc, [true; LEVELS], "{}", topo.nodes[o].name);
        }
    }
}
