use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use lsnet_core::arch::FpnVariant;
use lsnet_core::data::{index_dataset, load_checkpoint, load_image_pair, save_gray, write_synthetic_dataset, Split};
use lsnet_core::metrics::{confusion, pooled};
use lsnet_core::profiler::calibrate::{BACKBONE_TARGET, DENSE_FPN_TARGET, DIFF_FPN_TARGET};
use lsnet_core::profiler::{
    calibrate, count_flops, efficiency_metrics, load_entries, CalibrationGrid, CostReport, CostTarget,
};
use lsnet_core::train::{train, TrainData, TrainOutputs};
use lsnet_core::{ModelSpec, Shape, Tensor};
use serde::Serialize;

use crate::config::{announce, resolve, usage, Origin};
use crate::{Baseline, Cli, Command, EfficiencyArgs, EvalArgs, Format, InferArgs, ProfileArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let (origin, cfg) = resolve(cli.config.as_deref())?;
    match &cli.command {
        Command::Profile(a) => profile(a, cli.format, &origin, cfg.model),
        Command::Train(a) => train_cmd(a, cli.format, &origin, cfg),
        Command::Infer(a) => infer(a, cli.format, &origin, cfg.train.threshold),
        Command::Eval(a) => eval(a, cli.format, &origin, cfg.train.threshold),
        Command::Efficiency(a) => efficiency(a, cli.format, &origin),
        Command::Synth(a) => synth(a, &origin, cfg.synth),
        Command::Calibrate => calibrate_cmd(cli.format, &origin),
    }
}

fn emit(format: Format, table: String, json: impl FnOnce() -> String) {
    match format {
        Format::Table => print!("{table}"),
        Format::Json => println!("{}", json()),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

fn deviation(out: &mut String, label: &str, params: u64, macs: u64, target: &CostTarget) {
    let (p, g) = (params as f64 / 1e6, macs as f64 / 1e9);
    let _ = writeln!(
        out,
        "{label:<10} params {p:.4} M vs {:.4} M ({:+.2}%), GFLOPs {g:.4} vs {:.4} ({:+.2}%)",
        target.params_m,
        100.0 * (p / target.params_m - 1.0),
        target.gflops,
        100.0 * (g / target.gflops - 1.0)
    );
}

fn fpn_target(variant: FpnVariant) -> &'static CostTarget {
    match variant {
        FpnVariant::Dense => &DENSE_FPN_TARGET,
        FpnVariant::Diff => &DIFF_FPN_TARGET,
    }
}

fn profile(a: &ProfileArgs, format: Format, origin: &Origin, cfg_model: ModelSpec) -> anyhow::Result<()> {
    let (spec, from) = match &a.model {
        Some(p) => {
            require_file(p, "model spec")?;
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            (ModelSpec::from_toml(&text)?, Origin::Flag(p.clone()))
        }
        None if *origin != Origin::Default => (cfg_model, origin.clone()),
        None => (ModelSpec::canonical(), Origin::Default),
    };
    announce(&from, &format!("input_size = {:?}\n{}", a.input_size, spec.to_toml()));
    let (h, w) = (a.input_size[0], a.input_size[1]);
    spec.check_input(h, w)?;
    let input = Shape::new(1, 3, h, w);
    let at_reference = h == 256 && w == 256;

    let reports: Vec<CostReport> = if a.compare {
        [FpnVariant::Dense, FpnVariant::Diff]
            .into_iter()
            .map(|v| count_flops(&spec.clone().with_variant(v), input))
            .collect::<lsnet_core::Result<_>>()?
    } else {
        vec![count_flops(&spec, input)?]
    };

    let mut table = String::new();
    if a.compare {
        let (d, f) = (&reports[0], &reports[1]);
        let _ = writeln!(
            table,
            "{:<10} {:>14} {:>14} {:>14} {:>12} {:>12} {:>12}",
            "module", "dense params", "diff params", "delta", "dense GMAC", "diff GMAC", "delta"
        );
        for m in ["backbone", "fpn", "head", "total"] {
            let (x, y) = if m == "total" {
                (d.total.clone(), f.total.clone())
            } else {
                (d.module(m), f.module(m))
            };
            let (gx, gy) = (x.macs as f64 / 1e9, y.macs as f64 / 1e9);
            let _ = writeln!(
                table,
                "{m:<10} {:>14} {:>14} {:>+14} {gx:>12.4} {gy:>12.4} {:>+12.4}",
                x.params,
                y.params,
                y.params as i64 - x.params as i64,
                gy - gx
            );
        }
    } else {
        table.push_str(&reports[0].to_table());
    }
    if at_reference {
        let _ = writeln!(table, "deviation from published costs (GFLOPs counted as MACs):");
        let b = reports[0].module("backbone");
        deviation(&mut table, "backbone", b.params, b.macs, &BACKBONE_TARGET);
        let variants: Vec<FpnVariant> = if a.compare {
            vec![FpnVariant::Dense, FpnVariant::Diff]
        } else {
            vec![spec.fpn.variant]
        };
        for (r, v) in reports.iter().zip(variants) {
            let f = r.module("fpn");
            deviation(&mut table, &format!("{v} FPN"), f.params, f.macs, fpn_target(v));
        }
    }

    let json = || {
        if a.compare {
            to_json(&serde_json::json!({ "dense": reports[0], "diff": reports[1] }))
        } else {
            reports[0].to_json()
        }
    };
    if let Some(out) = &a.out {
        std::fs::write(out, json() + "\n").with_context(|| out.display().to_string())?;
    }
    emit(format, table, json);
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn history_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("history.jsonl")
}

fn train_cmd(
    a: &TrainArgs,
    format: Format,
    origin: &Origin,
    mut cfg: lsnet_core::train::RunConfig,
) -> anyhow::Result<()> {
    if let Some(v) = a.steps {
        cfg.train.max_steps = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    cfg.validate()?;
    announce(origin, &cfg.to_toml());

    let data = match &a.data {
        Some(root) => TrainData::Dataset {
            train: index_dataset(root, Some(Split::Train))?,
            val: index_dataset(root, Some(Split::Val))?,
        },
        None => TrainData::Synthetic(cfg.synth.clone()),
    };
    let mut model = lsnet_core::LsNet::new(cfg.model.clone(), cfg.train.seed)?;
    let outputs = TrainOutputs {
        history: Some(history_path(&a.out)),
        checkpoint: Some(a.out.clone()),
    };
    let summary = train(&mut model, &data, &cfg.train, &outputs)?;
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:>6} {:>10} {:>8} {:>8} {:>8} {:>8}",
        "step", "loss", "P", "R", "F1", "OA"
    );
    for h in &summary.history {
        let _ = writeln!(
            table,
            "{:>6} {:>10.5} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            h.step, h.loss, h.val_p, h.val_r, h.val_f1, h.val_oa
        );
    }
    let _ = writeln!(
        table,
        "stopped after {} steps ({:?}); best F1 {:.2} at step {}; checkpoint {}",
        summary.steps,
        summary.stop,
        summary.best_f1,
        summary.best_step,
        a.out.display()
    );
    emit(format, table, || to_json(&summary));
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn default_mask_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "score".into());
    out.with_file_name(format!("{stem}.mask.png"))
}

#[derive(Serialize)]
struct InferReport {
    score: PathBuf,
    mask: PathBuf,
    height: usize,
    width: usize,
    threshold: f32,
    positive_fraction: f64,
}

fn infer(a: &InferArgs, format: Format, origin: &Origin, cfg_threshold: f32) -> anyhow::Result<()> {
    let threshold = a.threshold.unwrap_or(cfg_threshold);
    let mask_path = a.mask.clone().unwrap_or_else(|| default_mask_path(&a.out));
    announce(
        origin,
        &format!(
            "ckpt = {:?}\nthreshold = {threshold}\nscore = {:?}\nmask = {:?}",
            a.ckpt, a.out, mask_path
        ),
    );
    for (p, what) in [(&a.ckpt, "checkpoint"), (&a.a, "image"), (&a.b, "image")] {
        require_file(p, what)?;
    }
    let model = load_checkpoint(&a.ckpt)?;
    let (t1, t2) = load_image_pair(&a.a, &a.b)?;
    let s = t1.shape();
    model.spec.check_input(s.h, s.w)?;
    let prob = model.predict(&t1, &t2)?;
    let mask = prob.map(|p| if p >= threshold { 1.0 } else { 0.0 });
    save_gray(&a.out, &prob)?;
    save_gray(&mask_path, &mask)?;
    let report = InferReport {
        score: a.out.clone(),
        mask: mask_path,
        height: s.h,
        width: s.w,
        threshold,
        positive_fraction: mask.mean(),
    };
    let table = format!(
        "score {} ({}x{}), mask {} at threshold {}: {:.2}% positive\n",
        report.score.display(),
        report.width,
        report.height,
        report.mask.display(),
        threshold,
        100.0 * report.positive_fraction
    );
    emit(format, table, || to_json(&report));
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn eval(a: &EvalArgs, format: Format, origin: &Origin, cfg_threshold: f32) -> anyhow::Result<()> {
    let split: Split = a.split.parse()?;
    let threshold = a.threshold.unwrap_or(cfg_threshold);
    let predictor = match (a.baseline, &a.ckpt) {
        (Some(b), _) => format!("baseline {b:?}").to_lowercase(),
        (None, Some(p)) => p.display().to_string(),
        (None, None) => return Err(usage("eval needs --ckpt or --baseline")),
    };
    announce(
        origin,
        &format!(
            "data = {:?}\nsplit = \"{split}\"\npredictor = {predictor:?}\nthreshold = {threshold}",
            a.data
        ),
    );
    let model = match (&a.baseline, &a.ckpt) {
        (None, Some(p)) => {
            require_file(p, "checkpoint")?;
            Some(load_checkpoint(p)?)
        }
        _ => None,
    };
    let index = index_dataset(&a.data, Some(split))?;
    for w in &index.warnings {
        eprintln!("warning: {w}");
    }
    let mut counts = Vec::with_capacity(index.records.len());
    for r in &index.records {
        let (t1, t2, gt) = r.load()?;
        let pred: Tensor = match (&model, a.baseline) {
            (Some(m), _) => m.predict(&t1, &t2)?,
            (None, Some(Baseline::Oracle)) => gt.clone(),
            (None, _) => Tensor::zeros(gt.shape()),
        };
        counts.push(confusion(&pred, &gt, threshold)?);
    }
    if counts.is_empty() {
        return Err(lsnet_core::Error::Dataset {
            root: index.root.clone(),
            message: "no image pairs".into(),
        }
        .into());
    }
    let report = pooled(&counts)?;
    let table = format!(
        "{} pairs from {}\n{}",
        counts.len(),
        index.root.display(),
        report.to_table()
    );
    emit(format, table, || report.to_json());
    Ok(())
}

// ---------------------------------------------------------------------------
// efficiency, synth, calibrate
// ---------------------------------------------------------------------------

fn efficiency(a: &EfficiencyArgs, format: Format, origin: &Origin) -> anyhow::Result<()> {
    announce(origin, &format!("table = {:?}", a.table));
    require_file(&a.table, "entries file")?;
    let report = efficiency_metrics(&load_entries(&a.table)?)?;
    emit(format, report.to_table(), || report.to_json());
    Ok(())
}

fn synth(a: &SynthArgs, origin: &Origin, mut cfg: lsnet_core::data::SynthConfig) -> anyhow::Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.size {
        cfg.image_size = s;
    }
    cfg.validate()?;
    announce(
        origin,
        &format!(
            "out = {:?}\ncounts = {:?}\n{}",
            a.out,
            a.counts,
            toml::to_string(&cfg).expect("synth config serializes")
        ),
    );
    write_synthetic_dataset(&cfg, &a.out, [a.counts[0], a.counts[1], a.counts[2]])?;
    println!(
        "wrote {} / {} / {} pairs under {}",
        a.counts[0],
        a.counts[1],
        a.counts[2],
        a.out.display()
    );
    Ok(())
}

fn calibrate_cmd(format: Format, origin: &Origin) -> anyhow::Result<()> {
    let grid = CalibrationGrid::default();
    announce(
        origin,
        &format!(
            "stage_widths = {:?}\nfusion_widths = {:?}\nstage_blocks = {:?}\nreduction = {}",
            grid.stage_widths, grid.fusion_widths, grid.stage_blocks, grid.reduction
        ),
    );
    let c = calibrate(&grid)?;
    emit(format, c.to_table(), || to_json(&c));
    Ok(())
}
