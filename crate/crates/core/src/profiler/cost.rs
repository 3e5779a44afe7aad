use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::trace::{LayerRecord, Tracer};
use crate::arch::{LsNet, Mode, ModelSpec, Session};
use crate::autograd::Graph;
use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// How MACs are turned into a GFLOPs figure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GflopsConvention {
    /// One multiply-accumulate = one FLOP. Matches the published tables.
    #[default]
    Macs,
    /// One multiply-accumulate = two FLOPs.
    TwiceMacs,
}

impl GflopsConvention {
    pub fn gflops(self, macs: u64) -> f64 {
        let m = macs as f64 / 1e9;
        match self {
            GflopsConvention::Macs => m,
            GflopsConvention::TwiceMacs => 2.0 * m,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub params: u64,
    pub running: u64,
    pub macs: u64,
    pub ops: u64,
}

impl CostEntry {
    fn add(&mut self, other: &CostEntry) {
        self.params += other.params;
        self.running += other.running;
        self.macs += other.macs;
        self.ops += other.ops;
    }
}

/// Per-submodule costs. Entry names are scope labels such as
/// `backbone.stage2`, `fpn.d00` or `head`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub input: Option<[usize; 4]>,
    pub convention: GflopsConvention,
    pub entries: Vec<CostEntry>,
    pub total: CostEntry,
}

impl CostReport {
    /// Groups layer records by scope, keeping first-appearance order.
    pub fn from_records(model: impl Into<String>, input: Option<Shape>, records: &[LayerRecord]) -> Self {
        let mut entries: Vec<CostEntry> = Vec::new();
        for r in records {
            let e = match entries.iter_mut().position(|e| e.name == r.scope) {
                Some(i) => &mut entries[i],
                None => {
                    entries.push(CostEntry {
                        name: r.scope.clone(),
                        ..CostEntry::default()
                    });
                    entries.last_mut().expect("just pushed")
                }
            };
            e.add(&CostEntry {
                name: String::new(),
                params: r.params,
                running: r.running,
                macs: r.macs,
                ops: r.ops,
            });
        }
        Self::from_entries(model, input, entries)
    }

    pub fn from_entries(model: impl Into<String>, input: Option<Shape>, entries: Vec<CostEntry>) -> Self {
        let mut total = CostEntry {
            name: "total".into(),
            ..CostEntry::default()
        };
        for e in &entries {
            total.add(e);
        }
        CostReport {
            model: model.into(),
            input: input.map(|s| s.to_array()),
            convention: GflopsConvention::Macs,
            entries,
            total,
        }
    }

    pub fn with_convention(mut self, convention: GflopsConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn entry(&self, name: &str) -> Option<&CostEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Sum of all entries whose name is `prefix` or starts with `prefix.`.
    pub fn module(&self, prefix: &str) -> CostEntry {
        let mut acc = CostEntry {
            name: prefix.to_string(),
            ..CostEntry::default()
        };
        for e in &self.entries {
            if e.name == prefix || e.name.starts_with(&format!("{prefix}.")) {
                acc.add(e);
            }
        }
        acc
    }

    pub fn gflops(&self) -> f64 {
        self.convention.gflops(self.total.macs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }

    /// Human-readable table. Both GFLOPs conventions are always shown.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model);
        if let Some([n, c, h, w]) = self.input {
            let _ = writeln!(out, "input: ({n}, {c}, {h}, {w})");
        }
        let _ = writeln!(
            out,
            "{:<22} {:>12} {:>16} {:>10} {:>10} {:>14}",
            "module", "params", "conv MACs", "GMAC", "2*GMAC", "other ops"
        );
        let row = |out: &mut String, e: &CostEntry| {
            let _ = writeln!(
                out,
                "{:<22} {:>12} {:>16} {:>10.4} {:>10.4} {:>14}",
                e.name,
                e.params,
                e.macs,
                GflopsConvention::Macs.gflops(e.macs),
                GflopsConvention::TwiceMacs.gflops(e.macs),
                e.ops
            );
        };
        for e in &self.entries {
            row(&mut out, e);
        }
        for m in ["backbone", "fpn", "head"] {
            let e = self.module(m);
            if e.params > 0 || e.macs > 0 {
                row(&mut out, &e);
            }
        }
        row(&mut out, &self.total);
        let _ = writeln!(
            out,
            "BN running statistics (not counted as params): {}",
            self.total.running
        );
        out
    }
}

/// Parameter counts per submodule; MAC fields are zero.
pub fn count_params(spec: &ModelSpec) -> Result<CostReport> {
    let input = Shape::new(1, 3, spec.input_multiple(), spec.input_multiple());
    let mut t = Tracer::new();
    t.model(spec, input)?;
    for r in &mut t.records {
        r.macs = 0;
        r.ops = 0;
    }
    Ok(CostReport::from_records(spec.fpn.variant.to_string(), None, &t.records))
}

/// Analytical parameters, conv MACs and elementwise ops for one forward pass
/// on `input`. Backbone MACs cover both streams.
pub fn count_flops(spec: &ModelSpec, input: Shape) -> Result<CostReport> {
    let mut t = Tracer::new();
    t.model(spec, input)?;
    Ok(CostReport::from_records(
        spec.fpn.variant.to_string(),
        Some(input),
        &t.records,
    ))
}

/// Backbone cost for `streams` forward passes through one weight set.
pub fn count_backbone(spec: &ModelSpec, input: Shape, streams: u64) -> Result<CostReport> {
    spec.check_input(input.h, input.w)?;
    let mut t = Tracer::new();
    t.set_replicas(streams);
    t.backbone(&spec.backbone, input)?;
    Ok(CostReport::from_records("backbone", Some(input), &t.records))
}

/// Conv MACs measured by running the model with counting kernels. Meant for
/// small inputs; only `macs` is filled in.
pub fn count_flops_oracle(spec: &ModelSpec, input: Shape) -> Result<CostReport> {
    let model = LsNet::new(spec.clone(), 0)?;
    let x = Tensor::zeros(input);
    let mut s = Session::with_graph(&model.params, Mode::Eval, Graph::instrumented());
    model.forward(&mut s, &x, &x)?;
    let counts = s.graph.mac_counts().cloned().unwrap_or_default();
    Ok(measured_report(spec.fpn.variant.to_string(), input, counts))
}

fn measured_report(model: String, input: Shape, counts: BTreeMap<String, u64>) -> CostReport {
    let entries = counts
        .into_iter()
        .map(|(name, macs)| CostEntry {
            name,
            macs,
            ..CostEntry::default()
        })
        .collect();
    CostReport::from_entries(model, Some(input), entries)
}

/// Analytical cost of a plain chain of convolutions, one entry per layer.
pub fn count_chain_flops(layers: &[ConvSpec], input: Shape) -> Result<CostReport> {
    let mut t = Tracer::new();
    let mut x = input;
    for (i, spec) in layers.iter().enumerate() {
        t.set_scope(format!("layer{i}"));
        x = t.conv("conv", spec, x)?;
    }
    Ok(CostReport::from_records("chain", Some(input), &t.records))
}

/// Measured counterpart of [`count_chain_flops`].
pub fn count_chain_flops_oracle(layers: &[ConvSpec], input: Shape) -> Result<CostReport> {
    let mut x = Tensor::full(input, 0.5);
    let mut counts = BTreeMap::new();
    for (i, spec) in layers.iter().enumerate() {
        let w = Tensor::full(spec.weight_shape(), 0.01);
        let b = spec.bias.then(|| Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)));
        let (y, macs) = conv::conv2d_counted(&x, &w, b.as_ref(), spec)?;
        counts.insert(format!("layer{i}"), macs);
        x = y;
    }
    Ok(measured_report("chain".into(), input, counts))
}

/// Checks that every conv entry of `analytic` equals `measured` exactly.
pub fn compare_macs(analytic: &CostReport, measured: &CostReport) -> Result<()> {
    let nonzero = |r: &CostReport| -> BTreeMap<String, u64> {
        r.entries
            .iter()
            .filter(|e| e.macs > 0)
            .map(|e| (e.name.clone(), e.macs))
            .collect()
    };
    let (a, m) = (nonzero(analytic), nonzero(measured));
    if a != m {
        return Err(Error::InvalidSpec(format!(
            "MAC mismatch: analytic {a:?} vs measured {m:?}"
        )));
    }
    Ok(())
}
