//! Binary change-map accuracy: confusion counts, precision, recall, F1 and
//! overall accuracy, all reported in percent.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the positive and negative labels exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// A pixel is predicted positive iff `score >= threshold`.
pub fn confusion(pred: &Tensor, gt: &Tensor, threshold: f32) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            left: pred.shape(),
            right: gt.shape(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        let truth = if g == 1.0 {
            true
        } else if g == 0.0 {
            false
        } else {
            return Err(Error::NonBinaryTruth { index: i, value: g });
        };
        match (p >= threshold, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    /// No predicted positives.
    pub precision: bool,
    /// No actual positives.
    pub recall: bool,
    /// P + R = 0.
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub oa: f64,
    pub counts: ConfusionCounts,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn prf1_oa(c: &ConfusionCounts) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let mut degenerate = Degenerate {
        precision: p.is_none(),
        recall: r.is_none(),
        f1: false,
    };
    let (p, r) = (100.0 * p.unwrap_or(0.0), 100.0 * r.unwrap_or(0.0));
    let f1 = f1_from_pr(p, r).unwrap_or_else(|| {
        degenerate.f1 = true;
        0.0
    });
    Ok(MetricsReport {
        p,
        r,
        f1,
        oa: 100.0 * (c.tp + c.tn) as f64 / total as f64,
        counts: *c,
        degenerate,
    })
}

/// Harmonic mean of precision and recall, `None` when both are zero.
pub fn f1_from_pr(p: f64, r: f64) -> Option<f64> {
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

/// Pooled (micro-averaged) metrics over per-image counts.
pub fn pooled(per_image: &[ConfusionCounts]) -> Result<MetricsReport> {
    prf1_oa(&per_image.iter().copied().sum())
}

/// Mean of per-image P, R, F1 and OA. Images with degenerate ratios
/// contribute their zeros; `degenerate` is set if any image was degenerate.
pub fn per_image_mean(per_image: &[ConfusionCounts]) -> Result<MetricsReport> {
    if per_image.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let reports = per_image.iter().map(prf1_oa).collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut degenerate = Degenerate::default();
    for r in &reports {
        degenerate.precision |= r.degenerate.precision;
        degenerate.recall |= r.degenerate.recall;
        degenerate.f1 |= r.degenerate.f1;
    }
    Ok(MetricsReport {
        p: mean(|r| r.p),
        r: mean(|r| r.r),
        f1: mean(|r| r.f1),
        oa: mean(|r| r.oa),
        counts: per_image.iter().copied().sum(),
        degenerate,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8}", "P", "R", "F1", "OA");
        let _ = writeln!(out, "{:>8.2} {:>8.2} {:>8.2} {:>8.2}", self.p, self.r, self.f1, self.oa);
        let c = &self.counts;
        let _ = writeln!(out, "tp {} fp {} fn {} tn {}", c.tp, c.fp, c.fn_, c.tn);
        if self.degenerate.any() {
            let _ = writeln!(out, "degenerate ratios reported as 0: {:?}", self.degenerate);
        }
        out
    }
}
