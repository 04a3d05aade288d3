//! Channel model for communication constraints: limited range (CR),
//! limited bandwidth (LB), noisy messages (NM) and message loss (CL).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::comm::Message;
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, Tape, Var};
use crate::seed::{rng_for, stream};

/// Channel parameters. The default is the null channel: unlimited range
/// and bandwidth, no noise, no loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Maximum sender-receiver distance; `None` imposes no extra limit.
    pub range: Option<f64>,
    /// Leading payload dimensions that survive transmission; `None` is unlimited.
    pub bandwidth: Option<usize>,
    /// Standard deviation of additive Gaussian noise per transmitted dim.
    pub noise_sigma: f64,
    /// Independent per-message drop probability.
    pub loss_p: f64,
    pub seed: u64,
    /// Apply degradation to every exchange round, or only to the first send.
    pub degrade_all_rounds: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            range: None,
            bandwidth: None,
            noise_sigma: 0.0,
            loss_p: 0.0,
            seed: 0,
            degrade_all_rounds: true,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth == Some(0) {
            return Err(Error::config("channel bandwidth must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.loss_p) {
            return Err(Error::config(format!("loss_p {} outside [0, 1]", self.loss_p)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        if let Some(r) = self.range {
            if !(r >= 0.0) {
                return Err(Error::config(format!("channel range {r} must be >= 0")));
            }
        }
        Ok(())
    }

    /// True when the channel can never alter or drop a message.
    pub fn is_null(&self) -> bool {
        self.range.is_none() && self.bandwidth.is_none() && self.noise_sigma == 0.0 && self.loss_p == 0.0
    }

    /// Whether messages of `round` (1-based) pass through degradation.
    pub fn degrades_round(&self, round: usize) -> bool {
        self.degrade_all_rounds || round <= 1
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "channel config",
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Identity of one transmission; channel randomness is a pure function of
/// the channel seed and this identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MessageId {
    pub episode: u64,
    pub timestep: usize,
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
}

/// What the channel does to one message of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelEffect {
    Dropped,
    Delivered {
        /// Number of leading dims kept (the rest arrive as zeros).
        kept: usize,
        /// Noise added to the kept dims, if any.
        noise: Option<Vec<f64>>,
    },
}

pub fn channel_effect(cfg: &ChannelConfig, id: &MessageId, d: usize) -> ChannelEffect {
    if !cfg.degrades_round(id.round) {
        return ChannelEffect::Delivered { kept: d, noise: None };
    }
    let mut rng = rng_for(&[
        stream::CHANNEL,
        cfg.seed,
        id.episode,
        id.timestep as u64,
        id.round as u64,
        id.sender as u64,
        id.receiver as u64,
    ]);
    // Always consume the drop draw first so loss decisions do not depend
    // on the noise configuration.
    let u: f64 = rng.random();
    if u < cfg.loss_p {
        return ChannelEffect::Dropped;
    }
    let kept = cfg.bandwidth.map_or(d, |b| b.min(d));
    let noise = (cfg.noise_sigma > 0.0).then(|| {
        (0..kept)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * cfg.noise_sigma
            })
            .collect()
    });
    ChannelEffect::Delivered { kept, noise }
}

/// Passes a message through the channel; `None` means it was dropped.
pub fn apply_channel(cfg: &ChannelConfig, msg: &Message, receiver: usize, episode: u64) -> Option<Message> {
    let id = MessageId {
        episode,
        timestep: msg.timestep,
        round: msg.round,
        sender: msg.sender,
        receiver,
    };
    match channel_effect(cfg, &id, msg.payload.len()) {
        ChannelEffect::Dropped => None,
        ChannelEffect::Delivered { kept, noise } => {
            let mut payload = msg.payload.clone();
            for v in payload.iter_mut().skip(kept) {
                *v = 0.0;
            }
            if let Some(noise) = noise {
                for (v, z) in payload.iter_mut().zip(noise) {
                    *v += z;
                }
            }
            Some(Message { payload, ..msg.clone() })
        }
    }
}

/// On-tape transmission of a `1 x d` payload. Truncation and noise are
/// differentiable with respect to the payload; the null channel returns
/// the payload node untouched.
pub fn transmit(t: &mut Tape, cfg: &ChannelConfig, payload: Var, id: &MessageId) -> Result<Option<Var>> {
    let d = t.shape(payload).1;
    match channel_effect(cfg, id, d) {
        ChannelEffect::Dropped => Ok(None),
        ChannelEffect::Delivered { kept, noise } => {
            let mut out = payload;
            if kept < d {
                let mask: Vec<f64> = (0..d).map(|k| if k < kept { 1.0 } else { 0.0 }).collect();
                let mask = t.constant(DenseMatrix::from_vec(1, d, mask)?);
                out = t.mul(out, mask)?;
            }
            if let Some(noise) = noise {
                let mut full = noise;
                full.resize(d, 0.0);
                let z = t.constant(DenseMatrix::from_vec(1, d, full)?);
                out = t.add(out, z)?;
            }
            Ok(Some(out))
        }
    }
}

/// Constraint axes that a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintAxis {
    /// Communication range.
    CR,
    /// Limited bandwidth.
    LB,
    /// Noisy messages.
    NM,
    /// Communication loss.
    CL,
}

impl ConstraintAxis {
    /// A copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ChannelConfig, value: f64) -> Result<ChannelConfig> {
        let mut cfg = base.clone();
        match self {
            ConstraintAxis::CR => cfg.range = Some(value),
            ConstraintAxis::LB => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("bandwidth {value} must be a positive integer")));
                }
                cfg.bandwidth = Some(value as usize);
            }
            ConstraintAxis::NM => cfg.noise_sigma = value,
            ConstraintAxis::CL => cfg.loss_p = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for ConstraintAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CR" => Ok(ConstraintAxis::CR),
            "LB" => Ok(ConstraintAxis::LB),
            "NM" => Ok(ConstraintAxis::NM),
            "CL" => Ok(ConstraintAxis::CL),
            _ => Err(Error::config(format!("unknown constraint axis `{s}` (expected CR, LB, NM or CL)"))),
        }
    }
}

impl fmt::Display for ConstraintAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintAxis::CR => "CR",
            ConstraintAxis::LB => "LB",
            ConstraintAxis::NM => "NM",
            ConstraintAxis::CL => "CL",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(payload: Vec<f64>, sender: usize, timestep: usize) -> Message {
        Message {
            sender,
            payload,
            round: 1,
            timestep,
        }
    }

    #[test]
    fn full_loss_always_drops() {
        let cfg = ChannelConfig {
            loss_p: 1.0,
            ..Default::default()
        };
        for t in 0..100 {
            assert!(apply_channel(&cfg, &msg(vec![1.0], 0, t), 1, 0).is_none());
        }
    }

    #[test]
    fn drop_rate_concentrates() {
        let cfg = ChannelConfig {
            loss_p: 0.3,
            seed: 11,
            ..Default::default()
        };
        let drops = (0..10_000)
            .filter(|&k| apply_channel(&cfg, &msg(vec![0.0; 4], k % 7, k), (k + 1) % 7, 3).is_none())
            .count();
        let rate = drops as f64 / 10_000.0;
        assert!((0.28..=0.32).contains(&rate), "rate {rate}");
    }

    #[test]
    fn truncation_zero_pads() {
        let cfg = ChannelConfig {
            bandwidth: Some(2),
            ..Default::default()
        };
        let out = apply_channel(&cfg, &msg(vec![1.0, 2.0, 3.0, 4.0], 0, 0), 1, 0).unwrap();
        assert_eq!(out.payload, vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn noise_only_touches_kept_dims() {
        let cfg = ChannelConfig {
            bandwidth: Some(1),
            noise_sigma: 0.5,
            seed: 2,
            ..Default::default()
        };
        let out = apply_channel(&cfg, &msg(vec![1.0, 2.0], 0, 0), 1, 0).unwrap();
        assert_ne!(out.payload[0], 1.0);
        assert_eq!(out.payload[1], 0.0);
    }

    #[test]
    fn first_round_only_flag() {
        let cfg = ChannelConfig {
            loss_p: 1.0,
            degrade_all_rounds: false,
            ..Default::default()
        };
        let mut m = msg(vec![1.0], 0, 0);
        assert!(apply_channel(&cfg, &m, 1, 0).is_none());
        m.round = 2;
        assert_eq!(apply_channel(&cfg, &m, 1, 0).unwrap(), m);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            ChannelConfig { bandwidth: Some(0), ..Default::default() },
            ChannelConfig { loss_p: 1.5, ..Default::default() },
            ChannelConfig { noise_sigma: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(ChannelConfig::from_toml("loss_p = 0.2\nseed = 4\n").is_ok());
        assert!(ChannelConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn axis_parsing_and_application() {
        let base = ChannelConfig::default();
        assert_eq!("cl".parse::<ConstraintAxis>().unwrap(), ConstraintAxis::CL);
        assert!("XX".parse::<ConstraintAxis>().is_err());
        assert_eq!(ConstraintAxis::LB.apply(&base, 3.0).unwrap().bandwidth, Some(3));
        assert!(ConstraintAxis::LB.apply(&base, 2.5).is_err());
        assert_eq!(ConstraintAxis::NM.apply(&base, 0.1).unwrap().noise_sigma, 0.1);
    }

    proptest! {
        #[test]
        fn null_channel_is_bit_exact_identity(
            payload in proptest::collection::vec(-1e6f64..1e6, 1..12),
            sender in 0usize..8, receiver in 0usize..8, t in 0usize..50, episode in any::<u64>(),
        ) {
            let cfg = ChannelConfig::default();
            let m = msg(payload, sender, t);
            let out = apply_channel(&cfg, &m, receiver, episode).unwrap();
            let a: Vec<u64> = m.payload.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = out.payload.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn truncation_preserves_leading_dims(
            payload in proptest::collection::vec(-10f64..10.0, 1..10),
            b in 1usize..12,
        ) {
            let cfg = ChannelConfig { bandwidth: Some(b), ..Default::default() };
            let out = apply_channel(&cfg, &msg(payload.clone(), 0, 0), 1, 0).unwrap();
            let keep = b.min(payload.len());
            prop_assert_eq!(&out.payload[..keep], &payload[..keep]);
            prop_assert!(out.payload[keep..].iter().all(|v| *v == 0.0));
        }

        #[test]
        fn drop_decisions_are_reproducible(seed in any::<u64>(), p in 0.0f64..1.0) {
            let cfg = ChannelConfig { loss_p: p, seed, ..Default::default() };
            let m = msg(vec![1.0, 2.0], 3, 9);
            let first: Vec<bool> = (0..20).map(|r| apply_channel(&cfg, &m, r, 5).is_some()).collect();
            let second: Vec<bool> = (0..20).map(|r| apply_channel(&cfg, &m, r, 5).is_some()).collect();
            prop_assert_eq!(first, second);
        }
    }
}
