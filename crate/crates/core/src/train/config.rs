use serde::{Deserialize, Serialize};

use crate::assignment::NoiseSpec;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

fn unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

/// Independent double-Q pre-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub epsilon_final: f64,
    /// Per-episode multiplicative decay of epsilon.
    pub epsilon_decay: f64,
    /// Value written into explored Q entries.
    pub boost: f64,
    pub batch: usize,
    pub buffer: usize,
    pub optimize_every: usize,
    /// Fraction of idle (no-order) agent transitions kept.
    pub idle_keep: f64,
    /// Rewards are multiplied by this before entering the loss.
    pub reward_scale: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            episodes: 300,
            gamma: 0.99,
            tau: 0.005,
            epsilon: 0.99,
            epsilon_final: 0.0005,
            epsilon_decay: 0.98,
            boost: 1e6,
            batch: 256,
            buffer: 100_000,
            optimize_every: 4,
            idle_keep: 0.25,
            reward_scale: 1.0,
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl Stage1Config {
    /// Settings that learn within minutes on one core.
    pub fn desk() -> Self {
        Self {
            reward_scale: 0.1,
            adam: AdamConfig { lr: 1e-2, decay: 0.995, ..AdamConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        unit("gamma", self.gamma)?;
        unit("tau", self.tau)?;
        unit("epsilon", self.epsilon)?;
        unit("epsilon_decay", self.epsilon_decay)?;
        if !(0.0..=self.epsilon).contains(&self.epsilon_final) {
            return Err(Error::Config("epsilon_final must lie in [0, epsilon]".into()));
        }
        if !(0.0..=1.0).contains(&self.idle_keep) {
            return Err(Error::Config("idle_keep must lie in [0, 1]".into()));
        }
        if self.batch == 0 || self.buffer < self.batch || self.optimize_every == 0 {
            return Err(Error::Config("batch, buffer and optimize_every must be positive with buffer >= batch".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Centralized twin-critic fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Exploration noise on the behaviour policy.
    pub noise: NoiseSpec,
    /// Smoothing noise on the target actor.
    pub target_noise: NoiseSpec,
    /// Actor (and target) updates happen every `policy_delay` critic updates.
    pub policy_delay: usize,
    pub batch: usize,
    pub buffer: usize,
    pub optimize_every: usize,
    /// Include rejecting workers' log-probabilities in the actor objective.
    pub include_rejects: bool,
    /// Let critic gradients flow into the shared encoders.
    pub critic_grad_to_actor: bool,
    pub reward_scale: f64,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            episodes: 100,
            gamma: 0.99,
            tau: 0.005,
            noise: NoiseSpec::Bsc { epsilon: 0.1 },
            target_noise: NoiseSpec::Gaussian { sigma: 0.05 },
            policy_delay: 2,
            batch: 16,
            buffer: 10_000,
            optimize_every: 4,
            include_rejects: true,
            critic_grad_to_actor: false,
            reward_scale: 1.0,
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

impl Stage2Config {
    pub fn desk() -> Self {
        Self {
            episodes: 30,
            reward_scale: 0.1,
            actor_adam: AdamConfig { lr: 1e-5, ..AdamConfig::default() },
            critic_adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        unit("gamma", self.gamma)?;
        unit("tau", self.tau)?;
        self.noise.validate()?;
        self.target_noise.validate()?;
        if self.policy_delay == 0 {
            return Err(Error::Config("policy_delay must be at least 1".into()));
        }
        if self.batch == 0 || self.buffer < self.batch || self.optimize_every == 0 {
            return Err(Error::Config("batch, buffer and optimize_every must be positive with buffer >= batch".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Stage1Config::default().validate().unwrap();
        Stage1Config::desk().validate().unwrap();
        Stage2Config::default().validate().unwrap();
        Stage2Config::desk().validate().unwrap();
        assert!(Stage1Config { gamma: 0.0, ..Stage1Config::default() }.validate().is_err());
        assert!(Stage1Config { tau: 1.5, ..Stage1Config::default() }.validate().is_err());
        assert!(Stage2Config { policy_delay: 0, ..Stage2Config::default() }.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = Stage2Config::desk();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<Stage2Config>(&text).unwrap(), c);
        let partial: Stage1Config = toml::from_str("episodes = 7").unwrap();
        assert_eq!(partial.episodes, 7);
        assert_eq!(partial.gamma, 0.99);
    }
}
