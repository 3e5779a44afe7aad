//! Grid search for stage and fusion widths whose cost matches the published
//! backbone and FPN figures.

use serde::{Deserialize, Serialize};

use super::trace::Tracer;
use crate::arch::spec::{BackboneSpec, FpnSpec, FpnVariant, ModelSpec, LEVELS};
use crate::error::Result;
use crate::tensor::Shape;

/// Published cost of one module: parameters in millions, GFLOPs as MACs
/// for one pair of 256x256 inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTarget {
    pub params_m: f64,
    pub gflops: f64,
}

pub const BACKBONE_TARGET: CostTarget = CostTarget {
    params_m: 0.9326,
    gflops: 3.4956,
};
pub const DENSE_FPN_TARGET: CostTarget = CostTarget {
    params_m: 0.1590,
    gflops: 2.3348,
};
pub const DIFF_FPN_TARGET: CostTarget = CostTarget {
    params_m: 0.2299,
    gflops: 1.2464,
};
pub const CALIBRATION_INPUT: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub params_m: f64,
    pub gflops: f64,
}

impl Measured {
    /// Signed relative errors `(params, gflops)` against `t`.
    pub fn error(&self, t: &CostTarget) -> (f64, f64) {
        (self.params_m / t.params_m - 1.0, self.gflops / t.gflops - 1.0)
    }

    fn distance(&self, t: &CostTarget) -> f64 {
        let (p, g) = self.error(t);
        p.abs() + g.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub stage_channels: [usize; LEVELS],
    pub fusion_channels: [usize; LEVELS],
    pub backbone: Measured,
    pub dense_fpn: Measured,
    pub diff_fpn: Measured,
    pub candidates_scanned: usize,
}

/// Search grid. Stage widths are non-decreasing multiples of the attention
/// reduction; fusion widths are multiples of 4.
#[derive(Clone, Debug)]
pub struct CalibrationGrid {
    pub stage_widths: Vec<usize>,
    pub fusion_widths: Vec<usize>,
    pub stage_blocks: [usize; LEVELS],
    pub reduction: usize,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        CalibrationGrid {
            stage_widths: (2..=16).map(|k| 16 * k).collect(),
            fusion_widths: (1..=16).map(|k| 4 * k).collect(),
            stage_blocks: [3, 3, 8, 12],
            reduction: 16,
        }
    }
}

fn input() -> Shape {
    Shape::new(1, 3, CALIBRATION_INPUT, CALIBRATION_INPUT)
}

fn measured(t: &Tracer) -> Measured {
    let params: u64 = t.records.iter().map(|r| r.params).sum();
    let macs: u64 = t.records.iter().map(|r| r.macs).sum();
    Measured {
        params_m: params as f64 / 1e6,
        gflops: macs as f64 / 1e9,
    }
}

pub fn backbone_cost(spec: &BackboneSpec) -> Result<(Measured, [Shape; LEVELS])> {
    let mut t = Tracer::new();
    t.set_replicas(2);
    let levels = t.backbone(spec, input())?;
    Ok((measured(&t), levels))
}

pub fn fpn_cost(spec: &ModelSpec, levels: &[Shape; LEVELS]) -> Result<Measured> {
    let mut t = Tracer::new();
    t.fpn(spec, levels)?;
    Ok(measured(&t))
}

fn monotone(widths: &[usize]) -> Vec<[usize; LEVELS]> {
    let mut out = Vec::new();
    for (i, &a) in widths.iter().enumerate() {
        for (j, &b) in widths.iter().enumerate().skip(i) {
            for (k, &c) in widths.iter().enumerate().skip(j) {
                for &d in &widths[k..] {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// Picks the stage widths closest to the backbone target, then, at those
/// widths, the fusion widths closest to both FPN targets among those that
/// keep diff cheaper in GFLOPs and larger in params than dense.
pub fn calibrate(grid: &CalibrationGrid) -> Result<Calibration> {
    let mut scanned = 0;
    let mut best: Option<(f64, BackboneSpec, Measured, [Shape; LEVELS])> = None;
    for channels in monotone(&grid.stage_widths) {
        let spec = BackboneSpec::with_channels(grid.stage_blocks, channels, grid.reduction);
        if spec.validate().is_err() {
            continue;
        }
        scanned += 1;
        let (m, levels) = backbone_cost(&spec)?;
        let d = m.distance(&BACKBONE_TARGET);
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, spec, m, levels));
        }
    }
    let (_, backbone, backbone_cost, levels) = best.expect("non-empty grid");

    let mut best_fpn: Option<(f64, [usize; LEVELS], Measured, Measured)> = None;
    let w = &grid.fusion_widths;
    for &f0 in w {
        for &f1 in w {
            for &f2 in w {
                for &f3 in w {
                    let fusion = [f0, f1, f2, f3];
                    scanned += 1;
                    let spec = |variant| ModelSpec {
                        backbone: backbone.clone(),
                        fpn: FpnSpec {
                            variant,
                            fusion_channels: fusion,
                        },
                    };
                    let dense = fpn_cost(&spec(FpnVariant::Dense), &levels)?;
                    let diff = fpn_cost(&spec(FpnVariant::Diff), &levels)?;
                    if !(diff.gflops < dense.gflops && diff.params_m > dense.params_m) {
                        continue;
                    }
                    let d = dense.distance(&DENSE_FPN_TARGET) + diff.distance(&DIFF_FPN_TARGET);
                    if best_fpn.as_ref().is_none_or(|b| d < b.0) {
                        best_fpn = Some((d, fusion, dense, diff));
                    }
                }
            }
        }
    }
    let (_, fusion_channels, dense_fpn, diff_fpn) = best_fpn.expect("some fusion widths satisfy the directions");
    Ok(Calibration {
        stage_channels: backbone.stage_channels,
        fusion_channels,
        backbone: backbone_cost,
        dense_fpn,
        diff_fpn,
        candidates_scanned: scanned,
    })
}

impl Calibration {
    pub fn spec(&self, variant: FpnVariant) -> ModelSpec {
        ModelSpec {
            backbone: BackboneSpec::with_channels([3, 3, 8, 12], self.stage_channels, 16),
            fpn: FpnSpec {
                variant,
                fusion_channels: self.fusion_channels,
            },
        }
    }

    pub fn to_table(&self) -> String {
        let row = |name: &str, m: &Measured, t: &CostTarget| {
            let (p, g) = m.error(t);
            format!(
                "{name:<10} params {:>8.4} M (target {:>7.4}, {:+6.2}%)  GMAC {:>7.4} (target {:>7.4}, {:+6.2}%)  2*GMAC {:>7.4}\n",
                m.params_m,
                t.params_m,
                100.0 * p,
                m.gflops,
                t.gflops,
                100.0 * g,
                2.0 * m.gflops
            )
        };
        let mut out = format!(
            "stage channels {:?}, fusion channels {:?} ({} candidates)\n",
            self.stage_channels, self.fusion_channels, self.candidates_scanned
        );
        out += &row("backbone", &self.backbone, &BACKBONE_TARGET);
        out += &row("dense FPN", &self.dense_fpn, &DENSE_FPN_TARGET);
        out += &row("diff FPN", &self.diff_fpn, &DIFF_FPN_TARGET);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_grid_size() {
        // Multisets of size 4 from 3 values: C(6, 4) = 15.
        assert_eq!(monotone(&[1, 2, 3]).len(), 15);
        assert!(monotone(&[1, 2, 3]).iter().all(|c| c.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn canonical_matches_committed_calibration() {
        let spec = ModelSpec::canonical();
        let (m, _) = backbone_cost(&spec.backbone).unwrap();
        let (p, g) = m.error(&BACKBONE_TARGET);
        assert!(p.abs() <= 0.15 && g.abs() <= 0.15, "{m:?}");
    }
}
