use serde::{Deserialize, Serialize};

use crate::arch::ModelSpec;
use crate::data::SynthConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between validation passes (and history records).
    pub eval_interval: usize,
    pub seed: u64,
    pub loss: Loss,
    /// Validation pairs drawn from the synthetic generator.
    pub val_samples: usize,
    pub threshold: f32,
    /// Stop once validation F1 (percent) reaches this value.
    pub target_f1: Option<f64>,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            batch_size: 4,
            max_steps: 2000,
            eval_interval: 100,
            seed: 7,
            loss: Loss::Bce,
            val_samples: 32,
            threshold: 0.5,
            target_f1: None,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.val_samples == 0 {
            return bad("batch_size, eval_interval and val_samples must be positive");
        }
        Ok(())
    }
}

/// Everything a training run needs, as stored in a TOML file with
/// `[model]`, `[train]` and `[synth]` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelSpec::reduced")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::reduced(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_input(self.synth.image_size, self.synth.image_size)?;
        self.train.validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("[train]\nlr = 0.01\n").unwrap();
        assert_eq!(partial.train.lr, 0.01);
        assert_eq!(partial.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn committed_synthetic_config() {
        let cfg = RunConfig::from_toml(include_str!("../../../../configs/synthetic.toml")).unwrap();
        assert_eq!(cfg.model, ModelSpec::reduced());
        assert_eq!(cfg.synth, SynthConfig::default());
        assert_eq!(cfg.train.target_f1, Some(90.0));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0\n").is_err());
        assert!(RunConfig::from_toml("[synth]\nimage_size = 40\n").is_err());
    }
}
