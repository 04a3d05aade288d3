//! Shared fixtures for the benchmarks.

use gnn_comm::constraints::ChannelConfig;
use gnn_comm::env::{EpisodeTrace, PredatorPrey, PredatorPreyConfig};
use gnn_comm::marl::{run_episode, Phase, Rollout, TrainConfig};
use gnn_comm::methods::{instantiate, Experiment, MethodSpec};

/// A freshly initialised preset on the default Predator-Prey task.
pub fn experiment(preset: &str) -> Experiment {
    let spec = MethodSpec::preset(preset).expect("shipped preset");
    instantiate(&spec, &PredatorPreyConfig::default(), &TrainConfig::default()).expect("preset instantiates")
}

pub fn rollout(k: u64) -> Rollout {
    Rollout {
        episode: k,
        env_seed: k,
        phase: Phase::Train,
        action_seed: Some(k),
    }
}

/// `n` sampled training episodes under a perfect channel.
pub fn episodes(exp: &Experiment, n: u64) -> Vec<EpisodeTrace> {
    let mut env = PredatorPrey::new(exp.env.clone()).expect("valid env");
    (0..n)
        .map(|k| run_episode(&exp.policy, &exp.store, &mut env, &ChannelConfig::default(), rollout(k)).expect("episode runs"))
        .collect()
}
