//! Experiment configuration: strict JSON schema with defaults.
//!
//! Unknown fields are rejected so a typoed hyperparameter can never be
//! silently ignored.

use crate::error::{Error, Result};
use crate::policy::ExploreCfg;
use crate::replay::RewardMode;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// "flipbit", "nav" or "fourroom".
    pub name: String,
    /// Dimension parameter K; ignored by "fourroom".
    #[serde(default)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hem,
    Reinforce,
    Hpg,
    DqnHer,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExploreConfig {
    Greedy,
    EpsilonUniform { epsilon: f64 },
    GaussianNoise { sigma: f64 },
}

impl From<ExploreConfig> for ExploreCfg {
    fn from(c: ExploreConfig) -> Self {
        match c {
            ExploreConfig::Greedy => ExploreCfg::Greedy,
            ExploreConfig::EpsilonUniform { epsilon } => ExploreCfg::EpsilonUniform { epsilon },
            ExploreConfig::GaussianNoise { sigma } => ExploreCfg::GaussianNoise { sigma },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardModeConfig {
    #[default]
    ZeroOne,
    MinusOneZero,
}

impl From<RewardModeConfig> for RewardMode {
    fn from(c: RewardModeConfig) -> Self {
        match c {
            RewardModeConfig::ZeroOne => RewardMode::ZeroOne,
            RewardModeConfig::MinusOneZero => RewardMode::MinusOneZero,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineConfig {
    #[default]
    Off,
    Mean,
}

fn default_net() -> Vec<usize> {
    vec![64, 64]
}
fn default_n_trajectories() -> usize {
    64
}
fn default_gradient_steps() -> usize {
    40
}
fn default_batch_size() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eval_episodes() -> usize {
    100
}
fn default_replay_capacity() -> usize {
    crate::replay::DEFAULT_CAPACITY
}
fn default_k_her() -> usize {
    4
}
fn default_gamma() -> f64 {
    0.98
}
fn default_target_sync() -> usize {
    200
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    /// Hidden layer sizes of every network.
    #[serde(default = "default_net")]
    pub net: Vec<usize>,
    /// Episodes collected per iteration (N).
    #[serde(default = "default_n_trajectories")]
    pub n_trajectories: usize,
    /// Gradient updates per iteration.
    #[serde(default = "default_gradient_steps")]
    pub gradient_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Collection-time exploration; defaults by action kind
    /// (epsilon 0.3 discrete, sigma 0.5 continuous).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreConfig>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_replay_capacity")]
    pub replay_capacity: usize,
    #[serde(default)]
    pub reward_mode: RewardModeConfig,
    #[serde(default = "default_k_her")]
    pub k_her: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_target_sync")]
    pub target_sync: usize,
    /// Control variate for the reinforce baseline algorithm.
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Fraction of hem M-step samples drawn from successful episodes with
    /// original goals (0 disables mixing).
    #[serde(default)]
    pub mix_original: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Training stops once this many environment steps have been collected.
    pub total_env_steps: u64,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_env_steps == 0 {
            return Err(Error::Config("total_env_steps must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.n_trajectories == 0 || self.gradient_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "n_trajectories, gradient_steps and batch_size must be positive".into(),
            ));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config("gamma must be in (0,1)".into()));
        }
        if self.net.is_empty() {
            return Err(Error::Config("net needs at least one hidden layer".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_original) {
            return Err(Error::Config("mix_original must be in [0,1]".into()));
        }
        if let Some(e) = self.explore {
            ExploreCfg::from(e).validate()?;
        }
        match self.env.name.as_str() {
            "flipbit" | "nav" | "fourroom" => Ok(()),
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }

    /// Round-trip-stable JSON with every resolved field present.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "env": {"name": "flipbit", "k": 15},
        "algorithm": "hem",
        "total_env_steps": 1000,
        "output_dir": "/tmp/run"
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.n_trajectories, 64);
        assert_eq!(cfg.gradient_steps, 40);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.net, vec![64, 64]);
        assert_eq!(cfg.k_her, 4);
        assert_eq!(cfg.workers, 1);
    }

    #[test]
    fn unknown_field_is_rejected_and_named() {
        let bad = MINIMAL.replace("\"algorithm\"", "\"learning_rate\": 3, \"algorithm\"");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("learning_rate"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_values_are_rejected() {
        let zero_budget = MINIMAL.replace("1000", "0");
        assert!(ExperimentConfig::from_json(&zero_budget).is_err());
        let bad_env = MINIMAL.replace("flipbit", "mujoco");
        assert!(ExperimentConfig::from_json(&bad_env).is_err());
    }

    #[test]
    fn config_roundtrips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let json = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
