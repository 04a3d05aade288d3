use std::io::Write;

use serde::{Deserialize, Serialize};

use super::PreyState;
use crate::comm::CommStepTrace;
use crate::error::Result;

/// One transition: the state before acting, what the agents saw and did,
/// and what the communication step looked like.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: PreyState,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Agents already locked before acting; their actions carry no signal.
    pub frozen: Vec<bool>,
    pub comm: CommStepTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    /// Identifier also keying the channel's randomness.
    pub episode: u64,
    pub env_seed: u64,
    pub steps: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.steps.first().map_or(0, |s| s.rewards.len())
    }

    /// Undiscounted return per agent.
    pub fn agent_returns(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_agents()];
        for s in &self.steps {
            for (acc, r) in out.iter_mut().zip(&s.rewards) {
                *acc += r;
            }
        }
        out
    }

    /// Mean over agents of the undiscounted return.
    pub fn team_return(&self) -> f64 {
        let r = self.agent_returns();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }

    pub fn inter_agent_messages(&self) -> usize {
        self.steps.iter().map(|s| s.comm.inter_agent_messages).sum()
    }

    pub fn proxy_messages(&self) -> usize {
        self.steps.iter().map(|s| s.comm.proxy_messages).sum()
    }

    /// One JSON object per step, tagged with the episode id.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            episode: u64,
            t: usize,
            #[serde(flatten)]
            step: &'a StepRecord,
        }
        for (t, step) in self.steps.iter().enumerate() {
            serde_json::to_writer(
                &mut w,
                &Line {
                    episode: self.episode,
                    t,
                    step,
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(rewards: Vec<f64>, messages: usize) -> StepRecord {
        StepRecord {
            state: PreyState {
                t: 0,
                predators: vec![(0, 0); rewards.len()],
                prey: (1, 1),
                locked: vec![false; rewards.len()],
            },
            observations: vec![vec![0.0]; rewards.len()],
            actions: vec![4; rewards.len()],
            frozen: vec![false; rewards.len()],
            rewards,
            done: false,
            comm: CommStepTrace {
                inter_agent_messages: messages,
                ..Default::default()
            },
        }
    }

    #[test]
    fn returns_and_counts() {
        let tr = EpisodeTrace {
            episode: 3,
            env_seed: 9,
            steps: vec![step(vec![1.0, -1.0], 2), step(vec![0.5, 0.5], 4)],
        };
        assert_eq!(tr.agent_returns(), vec![1.5, -0.5]);
        assert_eq!(tr.team_return(), 0.5);
        assert_eq!(tr.inter_agent_messages(), 6);
    }

    #[test]
    fn jsonl_has_one_line_per_step() {
        let tr = EpisodeTrace {
            episode: 1,
            env_seed: 0,
            steps: vec![step(vec![0.0], 0); 3],
        };
        let mut buf = Vec::new();
        tr.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        assert_eq!(v["t"], 2);
        assert_eq!(v["episode"], 1);
    }
}
