//! Episode loop, communication-aware policies and policy-gradient training.

mod policy;
mod train;

pub use policy::{AgentPolicy, Phase, StepOutput, TeamPolicy};
pub use train::{
    batch_loss, evaluate, run_episode, train, Baselines, EvalReport, LossReport, Rollout, SeedStats, TrainSummary, UpdateRecord,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the communicated representation enters the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Policy from `h_i`; baseline from the raw observation.
    Policy,
    /// Value estimate from `h_i`; the policy reads the same representation.
    Value,
    /// Both heads from `h_i`.
    PolicyAndValue,
    /// Policy from the raw observation; a training-only baseline from the
    /// proxy's joint representation.
    CentralCritic,
}

impl FromStr for Integration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(Integration::Policy),
            "value" => Ok(Integration::Value),
            "policy_and_value" => Ok(Integration::PolicyAndValue),
            "central_critic" => Ok(Integration::CentralCritic),
            other => Err(Error::config(format!("unknown integration `{other}`"))),
        }
    }
}

impl fmt::Display for Integration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integration::Policy => "policy",
            Integration::Value => "value",
            Integration::PolicyAndValue => "policy_and_value",
            Integration::CentralCritic => "central_critic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub batch_episodes: usize,
    pub parameter_sharing: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Gradient-norm clipping threshold; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
    /// Hidden width of the policy and value heads.
    pub hidden: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 0.1,
            episodes: 2000,
            batch_episodes: 10,
            parameter_sharing: true,
            entropy_coef: 0.01,
            value_coef: 0.5,
            clip_grad_norm: Some(5.0),
            hidden: 32,
            eval_episodes: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_episodes == 0 {
            return Err(Error::config("batch_episodes must be at least 1"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(Error::config("entropy_coef and value_coef must be >= 0"));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_grad_norm must be positive"));
            }
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "train config",
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Discounted returns `R_t = r_t + gamma R_{t+1}` by backward recursion.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(compute_returns(&[3.0, -2.0], 0.0), vec![3.0, -2.0]);
        assert_eq!(compute_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
        assert!(compute_returns(&[], 0.9).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::from_toml("episodes = 0\nseed = 3\n").is_ok());
        assert!(TrainConfig::from_toml("epochs = 3\n").is_err());
        assert_eq!("central_critic".parse::<Integration>().unwrap(), Integration::CentralCritic);
    }

    proptest! {
        #[test]
        fn recursion_holds_exactly(rewards in proptest::collection::vec(-5.0f64..5.0, 1..30), gamma in 0.0f64..0.999) {
            let r = compute_returns(&rewards, gamma);
            for t in 0..rewards.len() {
                let next = if t + 1 < rewards.len() { r[t + 1] } else { 0.0 };
                prop_assert_eq!(r[t], rewards[t] + gamma * next);
            }
        }
    }
}
