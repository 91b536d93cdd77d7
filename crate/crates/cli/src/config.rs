//! Training configuration: JSON files with dotted keys, overridable from
//! the command line (`--seed`, `--out`, `--data`, and `--set key=value`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nmn_core::executor::TfGranularity;
use nmn_core::guidance::{LossWeights, MatchConfig, MatchMode, ScheduleConfig, ScheduleKind};
use nmn_core::params::{OptimizerConfig, OptimizerKind};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint cadence in epochs.
    pub eval_every: u32,
    /// Optional cap on training examples (ablation sweeps).
    pub train_subset: Option<usize>,
    /// Training examples sampled for the per-epoch train accuracy.
    pub eval_train_subset: usize,
    #[serde(rename = "optimizer.kind")]
    pub optimizer_kind: String,
    #[serde(rename = "optimizer.lr")]
    pub lr: f64,
    #[serde(rename = "tf.kind")]
    pub tf_kind: String,
    #[serde(rename = "tf.horizon")]
    pub tf_horizon: u32,
    #[serde(rename = "tf.floor")]
    pub tf_floor: f64,
    #[serde(rename = "tf.granularity")]
    pub tf_granularity: String,
    #[serde(rename = "match.mode")]
    pub match_mode: String,
    #[serde(rename = "match.tau")]
    pub match_tau: f64,
    #[serde(rename = "loss.alpha")]
    pub alpha: f64,
    #[serde(rename = "loss.beta")]
    pub beta: f64,
    #[serde(rename = "loss.gamma")]
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
            epochs: 30,
            batch_size: 32,
            seed: 1,
            eval_every: 5,
            train_subset: None,
            eval_train_subset: 1000,
            optimizer_kind: "adam".into(),
            lr: 1e-3,
            tf_kind: "linear".into(),
            tf_horizon: 10,
            tf_floor: 0.0,
            tf_granularity: "edge".into(),
            match_mode: "soft".into(),
            match_tau: 0.5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Applies one `key=value` override using the config file's key names.
    pub fn apply_set(&mut self, setting: &str) -> Result<()> {
        let Some((key, value)) = setting.split_once('=') else {
            bail!("--set expects key=value, got `{setting}`");
        };
        match key {
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "epochs" => self.epochs = value.parse()?,
            "batch_size" => self.batch_size = value.parse()?,
            "seed" => self.seed = value.parse()?,
            "eval_every" => self.eval_every = value.parse()?,
            "train_subset" => {
                self.train_subset = if value.is_empty() {
                    None
                } else {
                    Some(value.parse()?)
                }
            }
            "eval_train_subset" => self.eval_train_subset = value.parse()?,
            "optimizer.kind" => self.optimizer_kind = value.into(),
            "optimizer.lr" => self.lr = value.parse()?,
            "tf.kind" => self.tf_kind = value.into(),
            "tf.horizon" => self.tf_horizon = value.parse()?,
            "tf.floor" => self.tf_floor = value.parse()?,
            "tf.granularity" => self.tf_granularity = value.into(),
            "match.mode" => self.match_mode = value.into(),
            "match.tau" => self.match_tau = value.parse()?,
            "loss.alpha" => self.alpha = value.parse()?,
            "loss.beta" => self.beta = value.parse()?,
            "loss.gamma" => self.gamma = value.parse()?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        let kind = match self.tf_kind.as_str() {
            "linear" => ScheduleKind::Linear,
            "exponential" => ScheduleKind::Exponential,
            "inverse_sigmoid" => ScheduleKind::InverseSigmoid,
            "constant" => ScheduleKind::Constant,
            other => bail!("unknown tf.kind `{other}`"),
        };
        Ok(ScheduleConfig {
            kind,
            horizon: self.tf_horizon,
            floor: self.tf_floor,
        })
    }

    pub fn granularity(&self) -> Result<TfGranularity> {
        match self.tf_granularity.as_str() {
            "edge" => Ok(TfGranularity::Edge),
            "program" => Ok(TfGranularity::Program),
            other => bail!("unknown tf.granularity `{other}`"),
        }
    }

    pub fn match_config(&self) -> Result<MatchConfig> {
        let mode = match self.match_mode.as_str() {
            "hard" => MatchMode::Hard,
            "soft" => MatchMode::Soft,
            other => bail!("unknown match.mode `{other}`"),
        };
        if !(0.0..=1.0).contains(&self.match_tau) || self.match_tau == 0.0 {
            bail!("match.tau must be in (0, 1], got {}", self.match_tau);
        }
        Ok(MatchConfig {
            mode,
            tau: self.match_tau,
        })
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let w = LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        };
        w.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(w)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let kind = match self.optimizer_kind.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::adam_default(),
            other => bail!("unknown optimizer.kind `{other}`"),
        };
        if self.lr <= 0.0 {
            bail!("optimizer.lr must be positive");
        }
        Ok(OptimizerConfig {
            lr: self.lr as nmn_core::Real,
            kind,
        })
    }

    /// Whether decaying teacher forcing is active (a constant-zero
    /// schedule means no input guidance).
    pub fn tf_enabled(&self) -> bool {
        !(self.tf_kind == "constant" && self.tf_floor == 0.0)
    }

    /// Whether intermediate (multi-task) losses are active.
    pub fn mt_enabled(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse_and_unknown_keys_fail() {
        let cfg: TrainConfig = serde_json::from_str(
            r#"{
                "data": "d", "epochs": 3,
                "tf.kind": "exponential", "tf.horizon": 7,
                "match.mode": "hard", "loss.alpha": 0.0
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.tf_kind, "exponential");
        assert_eq!(cfg.tf_horizon, 7);
        assert_eq!(cfg.match_mode, "hard");
        assert_eq!(cfg.alpha, 0.0);
        assert_eq!(cfg.batch_size, 32, "defaults fill the rest");

        assert!(serde_json::from_str::<TrainConfig>(r#"{"tf.knid": "x"}"#).is_err());
    }

    #[test]
    fn set_overrides_apply_in_order() {
        let mut cfg = TrainConfig::default();
        cfg.apply_set("loss.beta=0").unwrap();
        cfg.apply_set("tf.kind=constant").unwrap();
        cfg.apply_set("seed=9").unwrap();
        assert_eq!(cfg.beta, 0.0);
        assert_eq!(cfg.tf_kind, "constant");
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_set("no_such=1").is_err());
        assert!(cfg.apply_set("nonsense").is_err());
    }

    #[test]
    fn knob_validation() {
        let mut cfg = TrainConfig::default();
        cfg.tf_kind = "bogus".into();
        assert!(cfg.schedule().is_err());
        let mut cfg = TrainConfig::default();
        cfg.match_tau = 0.0;
        assert!(cfg.match_config().is_err());
        let mut cfg = TrainConfig::default();
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        cfg.gamma = 0.0;
        assert!(cfg.loss_weights().is_err());

        let cfg = TrainConfig::default();
        assert!(cfg.tf_enabled());
        assert!(cfg.mt_enabled());
        let mut cfg = TrainConfig::default();
        cfg.tf_kind = "constant".into();
        cfg.tf_floor = 0.0;
        assert!(!cfg.tf_enabled());
    }
}
