use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::bce_loss;
use super::optim::{Sgd, SgdState};
use crate::arch::{LsNet, Mode, ParamId, Session};
use crate::data::dataset::{DatasetIndex, Split};
use crate::data::save_checkpoint;
use crate::data::synth::{generate_synthetic_pair, split_offset, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{confusion, pooled, ConfusionCounts, MetricsReport};
use crate::tensor::Tensor;

/// One labelled pair: `(t1, t2, mask)`, each with batch size 1.
pub type Sample = (Tensor, Tensor, Tensor);

/// Where training pairs come from.
pub enum TrainData {
    Synthetic(SynthConfig),
    Dataset {
        train: DatasetIndex,
        val: DatasetIndex,
    },
    /// In-memory pairs, visited in order and cycled.
    Pairs {
        train: Vec<Sample>,
        val: Vec<Sample>,
    },
}

impl TrainData {
    /// Training samples for `step`. Synthetic samples are indexed by
    /// `step * batch + b`; dataset records are visited in a per-epoch
    /// shuffled order seeded by `seed`.
    fn batch(&self, step: usize, batch: usize, seed: u64) -> Result<Vec<Sample>> {
        match self {
            TrainData::Synthetic(cfg) => (0..batch)
                .map(|b| {
                    let s = generate_synthetic_pair(cfg, split_offset(Split::Train) + (step * batch + b) as u64)?;
                    Ok((s.t1, s.t2, s.mask))
                })
                .collect(),
            TrainData::Dataset { train, .. } => {
                let n = train.records.len();
                if n == 0 {
                    return Err(Error::Config(format!(
                        "no training records under {}",
                        train.root.display()
                    )));
                }
                (0..batch)
                    .map(|b| {
                        let k = step * batch + b;
                        let (epoch, pos) = (k / n, k % n);
                        let mut order: Vec<usize> = (0..n).collect();
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                        rng.set_stream(epoch as u64);
                        order.shuffle(&mut rng);
                        train.records[order[pos]].load()
                    })
                    .collect()
            }
            TrainData::Pairs { train, .. } => {
                if train.is_empty() {
                    return Err(Error::Config("no training pairs".into()));
                }
                Ok((0..batch)
                    .map(|b| train[(step * batch + b) % train.len()].clone())
                    .collect())
            }
        }
    }

    fn validation(&self, count: usize) -> Result<Vec<Sample>> {
        match self {
            TrainData::Synthetic(cfg) => (0..count)
                .map(|i| {
                    let s = generate_synthetic_pair(cfg, split_offset(Split::Val) + i as u64)?;
                    Ok((s.t1, s.t2, s.mask))
                })
                .collect(),
            TrainData::Dataset { val, .. } => val.records.iter().map(|r| r.load()).collect(),
            TrainData::Pairs { val, .. } => Ok(val.clone()),
        }
    }
}

fn stack3(samples: &[Sample]) -> Result<(Tensor, Tensor, Tensor)> {
    let a: Vec<&Tensor> = samples.iter().map(|s| &s.0).collect();
    let b: Vec<&Tensor> = samples.iter().map(|s| &s.1).collect();
    let m: Vec<&Tensor> = samples.iter().map(|s| &s.2).collect();
    Ok((Tensor::stack(&a)?, Tensor::stack(&b)?, Tensor::stack(&m)?))
}

const EVAL_CHUNK: usize = 8;

/// Per-image confusion counts of `model` on `samples` (eval-mode BN).
pub fn evaluate(model: &LsNet, samples: &[Sample], threshold: f32) -> Result<Vec<ConfusionCounts>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (a, b, m) = stack3(chunk)?;
        let p = model.predict(&a, &b)?;
        for i in 0..chunk.len() {
            out.push(confusion(&p.item(i), &m.item(i), threshold)?);
        }
    }
    Ok(out)
}

/// Result of one forward/backward pass on a batch.
pub struct StepOutput {
    pub loss: f64,
    pub grads: Vec<(ParamId, Tensor)>,
    pub running: Vec<(ParamId, Tensor)>,
}

/// Loss, parameter gradients and BN running-stat updates for one batch.
pub fn loss_and_grads(model: &LsNet, t1: &Tensor, t2: &Tensor, mask: &Tensor, mode: Mode) -> Result<StepOutput> {
    let mut s = Session::new(&model.params, mode);
    let out = model.forward(&mut s, t1, t2)?;
    let (loss, seed) = bce_loss(s.graph.value(out.head.prob), mask)?;
    let running: Vec<(ParamId, Tensor)> = s.running_updates().map(|(id, t)| (id, t.clone())).collect();
    let leaves: Vec<(ParamId, crate::autograd::NodeId)> = model
        .params
        .ids()
        .filter(|&id| model.params.entry(id).trainable)
        .filter_map(|id| s.param_node(id).map(|n| (id, n)))
        .collect();
    let mut g = s.graph.backward(out.head.prob, seed)?;
    let grads = leaves.into_iter().map(|(id, n)| (id, g.take(n))).collect();
    Ok(StepOutput { loss, grads, running })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub val_f1: f64,
    pub val_p: f64,
    pub val_r: f64,
    pub val_oa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    TargetReached,
    Patience,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub best_f1: f64,
    pub best_step: usize,
    pub stop: StopReason,
    pub history: Vec<HistoryRecord>,
}

/// Output files of a run; both optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// JSON lines, one [`HistoryRecord`] per evaluation. Truncated at start.
    pub history: Option<PathBuf>,
    /// Best-F1 checkpoint, rewritten whenever validation F1 improves.
    pub checkpoint: Option<PathBuf>,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains `model` in place. Steps are numbered from 1; an evaluation runs
/// every `eval_interval` steps and after the last step.
pub fn train(model: &mut LsNet, data: &TrainData, cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainSummary> {
    cfg.validate()?;
    if let Some(h) = &outputs.history {
        std::fs::write(h, b"").map_err(|e| Error::io(h, e))?;
    }
    let val = data.validation(cfg.val_samples)?;
    let opt = Sgd {
        lr: cfg.lr,
        momentum: cfg.momentum,
    };
    let mut state = SgdState::default();
    let mut history = Vec::new();
    let (mut best_f1, mut best_step, mut stale) = (f64::NEG_INFINITY, 0, 0);
    let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);
    let mut stop = StopReason::MaxSteps;
    let mut step = 0;
    while step < cfg.max_steps {
        step += 1;
        let samples = data.batch(step - 1, cfg.batch_size, cfg.seed)?;
        let (a, b, m) = stack3(&samples)?;
        let out = loss_and_grads(model, &a, &b, &m, Mode::Train)?;
        if !out.loss.is_finite() || out.grads.iter().any(|(_, g)| !g.all_finite()) {
            return Err(Error::Diverged { step, loss: out.loss });
        }
        loss_sum += out.loss;
        loss_count += 1;
        opt.step(&mut model.params, &out.grads, &mut state)?;
        model.commit_running(out.running);

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let report: MetricsReport = pooled(&evaluate(model, &val, cfg.threshold)?)?;
            let rec = HistoryRecord {
                step,
                loss: loss_sum / loss_count as f64,
                val_f1: report.f1,
                val_p: report.p,
                val_r: report.r,
                val_oa: report.oa,
            };
            (loss_sum, loss_count) = (0.0, 0);
            if let Some(h) = &outputs.history {
                append_line(h, &serde_json::to_string(&rec).expect("history serializes"))?;
            }
            history.push(rec);
            if report.f1 > best_f1 {
                (best_f1, best_step, stale) = (report.f1, step, 0);
                if let Some(p) = &outputs.checkpoint {
                    save_checkpoint(model, p)?;
                }
            } else {
                stale += 1;
            }
            if cfg.target_f1.is_some_and(|t| report.f1 >= t) {
                stop = StopReason::TargetReached;
                break;
            }
            if cfg.patience.is_some_and(|p| stale >= p) {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    Ok(TrainSummary {
        steps: step,
        best_f1: best_f1.max(0.0),
        best_step,
        stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::spec::{BackboneSpec, FpnSpec, FpnVariant, ModelSpec};

    fn tiny() -> LsNet {
        let spec = ModelSpec {
            backbone: BackboneSpec::with_channels([1, 1, 1, 1], [8, 16, 16, 16], 4),
            fpn: FpnSpec {
                variant: FpnVariant::Diff,
                fusion_channels: [4, 4, 4, 4],
            },
        };
        LsNet::new(spec, 1).unwrap()
    }

    fn synth() -> TrainData {
        TrainData::Synthetic(SynthConfig {
            image_size: 32,
            ..SynthConfig::default()
        })
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            max_steps: steps,
            eval_interval: 2,
            batch_size: 2,
            val_samples: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_trainable_weights_unchanged() {
        let mut model = tiny();
        let before = model.params.clone();
        train(
            &mut model,
            &synth(),
            &TrainConfig { lr: 0.0, ..cfg(3) },
            &TrainOutputs::default(),
        )
        .unwrap();
        for (a, b) in before.entries().iter().zip(model.params.entries()) {
            if a.trainable {
                assert!(a.tensor.bitwise_eq(&b.tensor), "{}", a.name);
            }
        }
    }

    #[test]
    fn same_seed_same_history_file() {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let p = dir.path().join(name);
            let mut model = tiny();
            let outputs = TrainOutputs {
                history: Some(p.clone()),
                checkpoint: Some(dir.path().join(format!("{name}.ckpt"))),
            };
            train(&mut model, &synth(), &cfg(4), &outputs).unwrap();
            std::fs::read(p).unwrap()
        };
        let (a, b) = (run("a.jsonl"), run("b.jsonl"));
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 2);
        assert!(dir.path().join("a.jsonl.ckpt").exists());
    }

    #[test]
    fn divergence_names_the_step() {
        let mut model = tiny();
        let err = train(
            &mut model,
            &synth(),
            &TrainConfig { lr: 1e30, ..cfg(6) },
            &TrainOutputs::default(),
        );
        match err {
            Err(Error::Diverged { step, .. }) => assert!(step >= 2, "{step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn every_trainable_tensor_gets_gradient() {
        let model = tiny();
        let data = synth();
        let samples = data.batch(0, 2, 0).unwrap();
        let (a, b, m) = stack3(&samples).unwrap();
        let out = loss_and_grads(&model, &a, &b, &m, Mode::Train).unwrap();
        let trainable = model.params.entries().iter().filter(|e| e.trainable).count();
        assert_eq!(out.grads.len(), trainable);
        for (id, g) in &out.grads {
            assert!(g.max_abs() > 0.0, "{} has zero gradient", model.params.entry(*id).name);
        }
    }
}
