//! Accuracy normalized by model size and cost.
//!
//! ```text
//! F1-P   = F1 / (Params / max Params)
//! F1-G   = F1 / (GFLOPs / max GFLOPs)
//! F1-Eff = (F1-P + F1-G) / 2
//! ```
//!
//! Maxima are taken over the entries of one report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    pub name: String,
    /// F1 in percent.
    pub f1: f64,
    /// Parameters in millions.
    pub params_m: f64,
    pub gflops: f64,
}

impl EfficiencyEntry {
    pub fn new(name: impl Into<String>, f1: f64, params_m: f64, gflops: f64) -> Self {
        EfficiencyEntry {
            name: name.into(),
            f1,
            params_m,
            gflops,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    #[serde(flatten)]
    pub entry: EfficiencyEntry,
    pub f1_p: f64,
    pub f1_g: f64,
    pub f1_eff: f64,
    /// 1-based position when sorted by F1-Eff, descending.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub max_params_m: f64,
    pub max_gflops: f64,
    /// Rows in input order.
    pub rows: Vec<EfficiencyRow>,
}

pub fn efficiency_metrics(entries: &[EfficiencyEntry]) -> Result<EfficiencyReport> {
    if entries.is_empty() {
        return Err(Error::NoEntries);
    }
    for e in entries {
        for (field, value) in [("params", e.params_m), ("gflops", e.gflops)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveCost {
                    name: e.name.clone(),
                    field,
                    value,
                });
            }
        }
    }
    let max_params_m = entries.iter().map(|e| e.params_m).fold(f64::MIN, f64::max);
    let max_gflops = entries.iter().map(|e| e.gflops).fold(f64::MIN, f64::max);
    let mut rows: Vec<EfficiencyRow> = entries
        .iter()
        .map(|e| {
            let f1_p = e.f1 / (e.params_m / max_params_m);
            let f1_g = e.f1 / (e.gflops / max_gflops);
            EfficiencyRow {
                entry: e.clone(),
                f1_p,
                f1_g,
                f1_eff: (f1_p + f1_g) / 2.0,
                rank: 0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    // Stable sort keeps input order among ties.
    order.sort_by(|&a, &b| rows[b].f1_eff.total_cmp(&rows[a].f1_eff));
    for (pos, &i) in order.iter().enumerate() {
        rows[i].rank = pos + 1;
    }
    Ok(EfficiencyReport {
        max_params_m,
        max_gflops,
        rows,
    })
}

impl EfficiencyReport {
    pub fn best_by<F: Fn(&EfficiencyRow) -> f64>(&self, key: F) -> &EfficiencyRow {
        self.rows
            .iter()
            .max_by(|a, b| key(a).total_cmp(&key(b)))
            .expect("report has rows")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("efficiency report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<20} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "rank", "model", "F1", "params M", "GFLOPs", "F1-P", "F1-G", "F1-Eff"
        );
        let mut rows: Vec<&EfficiencyRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.rank);
        for r in rows {
            let _ = writeln!(
                out,
                "{:<4} {:<20} {:>8.2} {:>10.4} {:>10.4} {:>10.2} {:>10.2} {:>10.2}",
                r.rank, r.entry.name, r.entry.f1, r.entry.params_m, r.entry.gflops, r.f1_p, r.f1_g, r.f1_eff
            );
        }
        let _ = writeln!(
            out,
            "max params {:.4} M, max GFLOPs {:.4}",
            self.max_params_m, self.max_gflops
        );
        out
    }
}

/// Parses `name, f1, params_m, gflops` lines. Blank lines and lines starting
/// with `#` are skipped. `path` is only used in error messages.
pub fn parse_entries(text: &str, path: &Path) -> Result<Vec<EfficiencyEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!(
                "expected 4 comma-separated fields, found {}",
                fields.len()
            )));
        }
        if fields[0].is_empty() {
            return Err(err("empty model name".into()));
        }
        let mut nums = [0.0f64; 3];
        for (slot, (label, text)) in nums.iter_mut().zip(["f1", "params", "gflops"].iter().zip(&fields[1..])) {
            *slot = text.parse::<f64>().map_err(|e| err(format!("{label} {text:?}: {e}")))?;
        }
        entries.push(EfficiencyEntry::new(fields[0], nums[0], nums[1], nums[2]));
    }
    if entries.is_empty() {
        return Err(Error::NoEntries);
    }
    Ok(entries)
}

pub fn load_entries(path: &Path) -> Result<Vec<EfficiencyEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_entries(&text, path)
}
