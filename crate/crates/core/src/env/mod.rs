//! Partially observable stochastic games and the Predator-Prey grid world.

mod predator_prey;
mod trace;

pub use predator_prey::{Action, PredatorPrey, PredatorPreyConfig, PreyState, Transition, ACTIONS, CHANNELS};
pub use trace::{EpisodeTrace, StepRecord};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Descriptor of a POSG instance: agents, spaces and discount.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosgSpec {
    pub n_agents: usize,
    /// Human-readable description of the state space and initial distribution.
    pub state_space: String,
    pub observation_dims: Vec<usize>,
    pub action_counts: Vec<usize>,
    pub gamma: f64,
}

impl PosgSpec {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if self.observation_dims.len() != self.n_agents || self.action_counts.len() != self.n_agents {
            return Err(Error::config("one observation and action space per agent"));
        }
        if self.action_counts.contains(&0) {
            return Err(Error::config("action spaces must be non-empty"));
        }
        Ok(())
    }
}

/// A multi-agent environment stepped with a joint action.
pub trait Posg {
    fn spec(&self, gamma: f64) -> PosgSpec;
    fn n_agents(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Starts a new episode and returns the joint observation.
    fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>>;
    fn step(&mut self, actions: &[usize]) -> Result<Transition>;
    /// Agent locations, used to decide who can talk to whom.
    fn agent_positions(&self) -> Vec<(usize, usize)>;
    /// Whether agent `i` sends messages this step.
    fn may_send(&self, i: usize) -> bool;
    /// Agents whose actions no longer matter (they are excluded from the
    /// policy-gradient loss).
    fn is_frozen(&self, i: usize) -> bool;
}
