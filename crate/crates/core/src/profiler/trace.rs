//! Shape-only walk over a network that records the cost of every layer.

use serde::{Deserialize, Serialize};

use crate::arch::fpn::{node_scope, FpnTopology, NodeKind, Source};
use crate::arch::spec::{BackboneSpec, CgbSpec, ModelSpec, LEVELS};
use crate::arch::{backbone, head};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    BatchNorm,
    Prelu,
    Activation,
    Pool,
    Resample,
    Elementwise,
}

/// Cost of one layer. `macs` and `ops` already include the replica factor
/// (2 for backbone layers, which run once per stream); `params` never do.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub scope: String,
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    /// Non-learnable stored values (BN running mean and variance).
    pub running: u64,
    pub macs: u64,
    /// Elementwise operations of norm, activation, pooling and resampling
    /// layers (one per output element).
    pub ops: u64,
}

/// Records layers while propagating shapes.
#[derive(Debug)]
pub struct Tracer {
    pub records: Vec<LayerRecord>,
    scope: String,
    replicas: u64,
}

impl Default for Tracer {
    fn default() -> Self {
        Tracer {
            records: Vec::new(),
            scope: String::new(),
            replicas: 1,
        }
    }
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    /// Multiplier applied to MACs and ops of subsequent layers.
    pub fn set_replicas(&mut self, replicas: u64) {
        self.replicas = replicas;
    }

    fn push(&mut self, name: &str, kind: LayerKind, params: u64, running: u64, macs: u64, ops: u64) {
        self.records.push(LayerRecord {
            scope: self.scope.clone(),
            name: name.to_string(),
            kind,
            params,
            running,
            macs: macs * self.replicas,
            ops: ops * self.replicas,
        });
    }

    pub fn conv(&mut self, name: &str, spec: &ConvSpec, x: Shape) -> Result<Shape> {
        spec.validate()?;
        if x.c != spec.in_channels {
            return Err(Error::DimMismatch {
                op: "conv",
                dim: "input channels",
                expected: spec.in_channels,
                got: x.c,
            });
        }
        let (oh, ow) = spec.output_hw(x.h, x.w)?;
        let kind = if spec.is_depthwise() {
            LayerKind::DepthwiseConv
        } else {
            LayerKind::Conv
        };
        let macs = spec.macs(oh, ow) * x.n as u64;
        self.push(name, kind, spec.param_count(), 0, macs, 0);
        Ok(Shape::new(x.n, spec.out_channels, oh, ow))
    }

    pub fn batch_norm(&mut self, name: &str, x: Shape) -> Shape {
        let c = x.c as u64;
        self.push(name, LayerKind::BatchNorm, 2 * c, 2 * c, 0, x.numel() as u64);
        x
    }

    pub fn prelu(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name, LayerKind::Prelu, x.c as u64, 0, 0, x.numel() as u64);
        x
    }

    pub fn activation(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name, LayerKind::Activation, 0, 0, 0, x.numel() as u64);
        x
    }

    pub fn global_avg_pool(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name, LayerKind::Pool, 0, 0, 0, x.numel() as u64);
        x.with_hw(1, 1)
    }

    /// Pooling with an explicit output size; cost is one op per input element.
    pub fn pool(&mut self, name: &str, x: Shape, oh: usize, ow: usize) -> Shape {
        self.push(name, LayerKind::Pool, 0, 0, 0, x.numel() as u64);
        x.with_hw(oh, ow)
    }

    pub fn avg_pool2(&mut self, name: &str, x: Shape) -> Shape {
        self.pool(name, x, x.h / 2, x.w / 2)
    }

    pub fn upsample(&mut self, name: &str, x: Shape, scale: usize) -> Shape {
        let y = x.with_hw(x.h * scale, x.w * scale);
        self.push(name, LayerKind::Resample, 0, 0, 0, y.numel() as u64);
        y
    }

    pub fn elementwise(&mut self, name: &str, x: Shape) -> Shape {
        self.push(name, LayerKind::Elementwise, 0, 0, 0, x.numel() as u64);
        x
    }

    pub fn concat(&mut self, parts: &[Shape]) -> Result<Shape> {
        let first = parts[0];
        for p in &parts[1..] {
            if (p.n, p.h, p.w) != (first.n, first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: *p,
                });
            }
        }
        Ok(first.with_c(parts.iter().map(|p| p.c).sum()))
    }

    pub fn conv_bn_prelu(&mut self, name: &str, spec: &ConvSpec, x: Shape) -> Result<Shape> {
        let y = self.conv(&format!("{name}.conv"), spec, x)?;
        let y = self.batch_norm(&format!("{name}.bn"), y);
        Ok(self.prelu(&format!("{name}.act"), y))
    }

    pub fn cgb(&mut self, name: &str, spec: &CgbSpec, x: Shape) -> Result<Shape> {
        spec.validate()?;
        let r = self.conv_bn_prelu(&format!("{name}.reduce"), &spec.reduce_conv(), x)?;
        let l = self.conv(&format!("{name}.local"), &spec.local_conv(), r)?;
        let s = self.conv(&format!("{name}.surround"), &spec.surround_conv(), r)?;
        let y = self.concat(&[l, s])?;
        let y = self.batch_norm(&format!("{name}.joint.bn"), y);
        let y = self.prelu(&format!("{name}.joint.act"), y);
        let g = self.global_avg_pool(&format!("{name}.gate.pool"), y);
        let g = match spec.gate_convs() {
            Some((fc1, fc2)) => {
                let h = self.conv(&format!("{name}.gate.fc1"), &fc1, g)?;
                let h = self.activation(&format!("{name}.gate.relu"), h);
                self.conv(&format!("{name}.gate.fc2"), &fc2, h)?
            }
            None => g,
        };
        self.activation(&format!("{name}.gate.sigmoid"), g);
        let out = self.elementwise(&format!("{name}.gate.scale"), y);
        if spec.downsample {
            Ok(out)
        } else {
            Ok(self.elementwise(&format!("{name}.residual"), out))
        }
    }

    /// One stream of the backbone; returns the four level shapes.
    pub fn backbone(&mut self, spec: &BackboneSpec, x: Shape) -> Result<[Shape; LEVELS]> {
        spec.validate()?;
        if x.c != 3 {
            return Err(Error::DimMismatch {
                op: "backbone",
                dim: "input channels",
                expected: 3,
                got: x.c,
            });
        }
        self.set_scope(backbone::stem_scope());
        let mut h = self.conv_bn_prelu("backbone.stem", &spec.stem, x)?;
        let mut levels = [h; LEVELS];
        for (s, level) in levels.iter_mut().enumerate() {
            self.set_scope(backbone::stage_scope(s));
            for (i, cgb) in spec.stage_cgbs(s).iter().enumerate() {
                h = self.cgb(&format!("backbone.stage{s}.block{i}"), cgb, h)?;
            }
            *level = h;
        }
        Ok(levels)
    }

    /// Fusion pyramid; returns the shapes of `d00`, `d10`, `d20`.
    pub fn fpn(&mut self, spec: &ModelSpec, levels: &[Shape; LEVELS]) -> Result<[Shape; 3]> {
        let topo = FpnTopology::new(spec.fpn.variant);
        topo.validate()?;
        let mut values: Vec<Shape> = Vec::with_capacity(topo.nodes.len());
        for node in &topo.nodes {
            self.set_scope(node_scope(node.name));
            let mut parts = Vec::new();
            for &src in &node.inputs {
                let mut x = match src {
                    Source::Feature { level, .. } => levels[level],
                    Source::Node(i) => values[i],
                };
                let from = topo.source_level(src);
                if from > node.level {
                    x = self.upsample(&format!("fpn.{}.up", node.name), x, 1 << (from - node.level));
                }
                for _ in from..node.level {
                    x = self.avg_pool2(&format!("fpn.{}.down", node.name), x);
                }
                parts.push(x);
            }
            if node.kind == NodeKind::Difference {
                parts.push(self.elementwise(&format!("fpn.{}.absdiff", node.name), parts[0]));
            }
            let cat = self.concat(&parts)?;
            let y = self.conv_bn_prelu(&format!("fpn.{}", node.name), &topo.conv_spec(node, spec), cat)?;
            values.push(y);
        }
        Ok(topo.outputs.map(|o| values[o]))
    }

    pub fn head(&mut self, outputs: [Shape; 3]) -> Result<Shape> {
        self.set_scope(head::head_scope());
        let target = outputs[0];
        let mut parts = Vec::with_capacity(3);
        for x in outputs {
            if x.h == target.h {
                parts.push(x);
            } else {
                parts.push(self.upsample("head.up", x, target.h / x.h));
            }
        }
        let cat = self.concat(&parts)?;
        let spec = ConvSpec::new(cat.c, 1, 1).with_bias(true);
        let y = self.conv("head.conv", &spec, cat)?;
        let y = self.activation("head.sigmoid", y);
        Ok(self.upsample("head.up_out", y, 2))
    }

    /// Full model: backbone (counted for two streams), FPN, head.
    pub fn model(&mut self, spec: &ModelSpec, input: Shape) -> Result<Shape> {
        spec.validate()?;
        spec.check_input(input.h, input.w)?;
        self.set_replicas(2);
        let levels = self.backbone(&spec.backbone, input)?;
        self.set_replicas(1);
        let outs = self.fpn(spec, &levels)?;
        self.head(outs)
    }
}
