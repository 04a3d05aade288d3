use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Posg, PosgSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPreyConfig {
    pub grid_size: usize,
    pub n_predators: usize,
    /// Chebyshev radius of the observation window.
    pub vision_range: usize,
    pub comm_range: f64,
    pub max_steps: usize,
    pub reward_on_prey: f64,
    pub cooperative_bonus: f64,
    pub step_penalty: f64,
    /// Predators that reached the prey keep sending messages.
    pub locked_send: bool,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            n_predators: 3,
            vision_range: 1,
            comm_range: 3.0,
            max_steps: 20,
            reward_on_prey: 1.0,
            cooperative_bonus: 0.5,
            step_penalty: -0.05,
            locked_send: true,
        }
    }
}

impl PredatorPreyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::config("grid_size must be at least 2"));
        }
        if self.n_predators == 0 {
            return Err(Error::config("need at least one predator"));
        }
        if self.n_predators >= self.grid_size * self.grid_size {
            return Err(Error::config(format!(
                "{} predators and a prey do not fit on a {}x{} grid",
                self.n_predators, self.grid_size, self.grid_size
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if !(self.comm_range >= 0.0) {
            return Err(Error::config("comm_range must be >= 0"));
        }
        if !(self.reward_on_prey > 0.0) || !(self.cooperative_bonus >= 0.0) || !(self.step_penalty <= 0.0) {
            return Err(Error::config(
                "rewards need reward_on_prey > 0, cooperative_bonus >= 0 and step_penalty <= 0",
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "environment config",
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn window(&self) -> usize {
        2 * self.vision_range + 1
    }

    pub fn observation_dim(&self) -> usize {
        self.window() * self.window() * CHANNELS + 2
    }
}

/// Channels per observed cell: other predators, prey, outside the grid.
pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const ACTIONS: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

impl Action {
    pub fn from_index(a: usize) -> Result<Self> {
        ACTIONS.get(a).copied().ok_or(Error::Index {
            what: "action",
            index: a,
            len: ACTIONS.len(),
        })
    }
}

/// Full state: positions are `(row, col)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreyState {
    pub t: usize,
    pub predators: Vec<(usize, usize)>,
    pub prey: (usize, usize),
    pub locked: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
}

/// Predators on a square grid searching for a stationary prey.
#[derive(Clone, Debug)]
pub struct PredatorPrey {
    cfg: PredatorPreyConfig,
    state: PreyState,
    done: bool,
}

impl PredatorPrey {
    pub fn new(cfg: PredatorPreyConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_predators;
        Ok(Self {
            state: PreyState {
                t: 0,
                predators: vec![(0, 0); n],
                prey: (0, 0),
                locked: vec![false; n],
            },
            cfg,
            done: true,
        })
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PreyState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Places entities explicitly; predators standing on the prey are locked.
    pub fn set_state(&mut self, predators: Vec<(usize, usize)>, prey: (usize, usize), t: usize) -> Result<()> {
        let g = self.cfg.grid_size;
        if predators.len() != self.cfg.n_predators {
            return Err(Error::contract("wrong number of predator positions"));
        }
        if predators.iter().chain([&prey]).any(|&(r, c)| r >= g || c >= g) {
            return Err(Error::contract("position outside the grid"));
        }
        let locked = predators.iter().map(|&p| p == prey).collect();
        self.state = PreyState {
            t,
            predators,
            prey,
            locked,
        };
        self.done = self.state.locked.iter().all(|&l| l) || t >= self.cfg.max_steps;
        Ok(())
    }

    pub fn observe(&self, i: usize) -> Result<Vec<f64>> {
        let s = &self.state;
        let &(ri, ci) = s.predators.get(i).ok_or(Error::Index {
            what: "agent",
            index: i,
            len: s.predators.len(),
        })?;
        let g = self.cfg.grid_size as i64;
        let v = self.cfg.vision_range as i64;
        let w = self.cfg.window();
        let mut obs = vec![0.0; self.cfg.observation_dim()];
        for dr in -v..=v {
            for dc in -v..=v {
                let cell = ((dr + v) as usize * w + (dc + v) as usize) * CHANNELS;
                let (r, c) = (ri as i64 + dr, ci as i64 + dc);
                if r < 0 || c < 0 || r >= g || c >= g {
                    obs[cell + 2] = 1.0;
                    continue;
                }
                let here = (r as usize, c as usize);
                obs[cell] = s
                    .predators
                    .iter()
                    .enumerate()
                    .filter(|&(k, &p)| k != i && p == here)
                    .count() as f64;
                if s.prey == here {
                    obs[cell + 1] = 1.0;
                }
            }
        }
        let scale = (self.cfg.grid_size - 1) as f64;
        let base = w * w * CHANNELS;
        obs[base] = ri as f64 / scale;
        obs[base + 1] = ci as f64 / scale;
        Ok(obs)
    }

    pub fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_predators)
            .map(|i| self.observe(i).expect("agent index in range"))
            .collect()
    }

    /// Reward of a predator standing on the prey when `count` predators are there.
    pub fn on_prey_reward(&self, count: usize) -> f64 {
        self.cfg.reward_on_prey + self.cfg.cooperative_bonus * (count.saturating_sub(1)) as f64
    }
}

impl Posg for PredatorPrey {
    fn spec(&self, gamma: f64) -> PosgSpec {
        let n = self.cfg.n_predators;
        PosgSpec {
            n_agents: n,
            state_space: format!(
                "{n} predator cells and one prey cell on a {g}x{g} grid; initial cells drawn uniformly without overlap",
                g = self.cfg.grid_size
            ),
            observation_dims: vec![self.cfg.observation_dim(); n],
            action_counts: vec![ACTIONS.len(); n],
            gamma,
        }
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_predators
    }

    fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    fn action_count(&self) -> usize {
        ACTIONS.len()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.cfg.grid_size;
        let n = self.cfg.n_predators;
        let cells = sample(&mut rng, g * g, n + 1).into_vec();
        let to_pos = |k: usize| (k / g, k % g);
        self.state = PreyState {
            t: 0,
            predators: cells[..n].iter().map(|&k| to_pos(k)).collect(),
            prey: to_pos(cells[n]),
            locked: vec![false; n],
        };
        self.done = false;
        Ok(self.observe_all())
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition> {
        let n = self.cfg.n_predators;
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        if actions.len() != n {
            return Err(Error::contract(format!("{} actions for {n} predators", actions.len())));
        }
        let moves = actions
            .iter()
            .map(|&a| Action::from_index(a))
            .collect::<Result<Vec<_>>>()?;
        let last = self.cfg.grid_size - 1;
        let s = &mut self.state;
        for (k, mv) in moves.into_iter().enumerate() {
            if s.locked[k] {
                continue;
            }
            let (r, c) = s.predators[k];
            s.predators[k] = match mv {
                Action::Up => (r.saturating_sub(1), c),
                Action::Down => ((r + 1).min(last), c),
                Action::Left => (r, c.saturating_sub(1)),
                Action::Right => (r, (c + 1).min(last)),
                Action::Stay => (r, c),
            };
            if s.predators[k] == s.prey {
                s.locked[k] = true;
            }
        }
        s.t += 1;
        let count = s.locked.iter().filter(|&&l| l).count();
        let on_prey = self.on_prey_reward(count);
        let s = &self.state;
        let rewards = s
            .locked
            .iter()
            .map(|&l| if l { on_prey } else { self.cfg.step_penalty })
            .collect();
        self.done = count == n || s.t >= self.cfg.max_steps;
        Ok(Transition {
            rewards,
            observations: self.observe_all(),
            done: self.done,
        })
    }

    fn agent_positions(&self) -> Vec<(usize, usize)> {
        self.state.predators.clone()
    }

    fn may_send(&self, i: usize) -> bool {
        self.cfg.locked_send || !self.state.locked[i]
    }

    fn is_frozen(&self, i: usize) -> bool {
        self.state.locked[i]
    }
}
