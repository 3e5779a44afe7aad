mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

/// Lightweight Siamese change detection: profiling, training, inference and
/// evaluation.
#[derive(Parser, Debug)]
#[command(name = "lsnet", version)]
pub struct Cli {
    /// Run configuration (TOML with [model], [train] and [synth] sections).
    /// Falls back to $LSNET_CONFIG, then ./lsnet.toml, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output format for reports on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parameter and MAC counts per module.
    Profile(ProfileArgs),
    /// Train on generated pairs or a dataset directory.
    Train(TrainArgs),
    /// Score map and change mask for one image pair.
    Infer(InferArgs),
    /// Precision, recall, F1 and overall accuracy on a dataset split.
    Eval(EvalArgs),
    /// F1-P, F1-G and F1-Eff from a table of published results.
    Efficiency(EfficiencyArgs),
    /// Write a generated dataset in A/B/OUT layout.
    Synth(SynthArgs),
    /// Search stage and fusion widths against the published costs.
    Calibrate,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Model spec TOML; defaults to the config's [model] or the canonical model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [256, 256])]
    pub input_size: Vec<usize>,
    /// Report dense and diff fusion pyramids side by side.
    #[arg(long)]
    pub compare: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(skip)]
#[command(group(ArgGroup::new("source").required(true).args(["synthetic", "data"])))]
pub struct TrainArgs {
    /// Train on pairs from the built-in generator.
    #[arg(long)]
    pub synthetic: bool,
    /// Dataset root with train/ and val/ splits.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; the history goes next to it as <name>.history.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Score map (8-bit grayscale).
    #[arg(long)]
    pub out: PathBuf,
    /// Binary mask; defaults to <out stem>.mask.png.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Predictions equal to the ground truth.
    Oracle,
    /// Predicts no change anywhere.
    Zeros,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Required unless --baseline is given.
    #[arg(long, required_unless_present = "baseline")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_enum, conflicts_with = "ckpt")]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Args, Debug)]
pub struct EfficiencyArgs {
    /// Lines of `name, f1, params_m, gflops`.
    #[arg(long)]
    pub table: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Pairs per split: train, val, test.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"], default_values_t = [64, 16, 16])]
    pub counts: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
}

/// Exit status for a failed run: 2 for bad input, 1 for failed computation.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<config::UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<lsnet_core::Error>() {
        Some(e) if !e.is_input() => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
