use super::Integration;
use crate::comm::{CommConfig, CommPipeline, CommStepTrace, LocalView, Paths, Reachability, StepContext, Topology};
use crate::constraints::ChannelConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::numeric::{DenseMatrix, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Action head and baseline head of one agent.
#[derive(Clone, Debug)]
pub struct AgentPolicy {
    pub policy: Mlp,
    pub value: Mlp,
}

/// Per-agent action log-probabilities (`1 x |A|`) and, when requested,
/// baselines (`1 x 1`) for one timestep.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub log_probs: Vec<Var>,
    pub values: Option<Vec<Var>>,
    pub comm: CommStepTrace,
    pub views: Vec<LocalView>,
}

/// All learnable functions of a team: the communication pipeline (if
/// any) and every agent's heads.
#[derive(Clone, Debug)]
pub struct TeamPolicy {
    comm: Option<CommPipeline>,
    integration: Integration,
    heads: Vec<AgentPolicy>,
    n_agents: usize,
    d_obs: usize,
    n_actions: usize,
}

impl TeamPolicy {
    /// `comm = None` gives independent learners acting on raw observations.
    /// `sharing` overrides the pipeline's own sharing flag so that one
    /// switch governs every parameter.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        comm: Option<CommConfig>,
        integration: Integration,
        n_agents: usize,
        d_obs: usize,
        n_actions: usize,
        hidden: usize,
        sharing: bool,
    ) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::config("agents need at least one action"));
        }
        let comm = match comm {
            Some(mut cfg) => {
                cfg.parameter_sharing = sharing;
                if integration == Integration::CentralCritic && !cfg.mode.proxy() {
                    return Err(Error::config("central_critic requires a proxy"));
                }
                Some(CommPipeline::new(store, cfg, n_agents, d_obs)?)
            }
            None => None,
        };
        let readout = comm.as_ref().map_or(d_obs, CommPipeline::readout_dim);
        let (d_pi, d_v) = match (&comm, integration) {
            (None, _) => (d_obs, d_obs),
            (Some(_), Integration::Policy) => (readout, d_obs),
            (Some(_), Integration::Value | Integration::PolicyAndValue) => (readout, readout),
            (Some(_), Integration::CentralCritic) => (d_obs, 2 * readout),
        };
        let units = if sharing { 1 } else { n_agents };
        let heads = (0..units)
            .map(|k| {
                let prefix = if sharing { String::new() } else { format!("agent{k}/") };
                Ok(AgentPolicy {
                    policy: Mlp::new(
                        store,
                        &format!("{prefix}policy"),
                        &[d_pi, hidden, n_actions],
                        Activation::Tanh,
                        Activation::Identity,
                    )?,
                    value: Mlp::new(
                        store,
                        &format!("{prefix}value"),
                        &[d_v, hidden, 1],
                        Activation::Tanh,
                        Activation::Identity,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            comm,
            integration,
            heads,
            n_agents,
            d_obs,
            n_actions,
        })
    }

    pub fn comm(&self) -> Option<&CommPipeline> {
        self.comm.as_ref()
    }

    pub fn integration(&self) -> Integration {
        self.integration
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn observation_dim(&self) -> usize {
        self.d_obs
    }

    pub fn head(&self, k: usize) -> &AgentPolicy {
        &self.heads[if self.heads.len() == 1 { 0 } else { k }]
    }

    /// Communication links for agents at `positions`.
    pub fn topology(&self, positions: &[(usize, usize)], env_range: f64, channel: &ChannelConfig) -> Result<Topology> {
        let reach = self
            .comm
            .as_ref()
            .map_or(Reachability::AllAgents, |c| c.config().reachability);
        Topology::from_positions(positions, reach, env_range, channel)
    }

    pub fn paths(&self, phase: Phase) -> Paths {
        match (&self.comm, self.integration) {
            (None, _) => Paths {
                distributed: false,
                proxy: false,
            },
            (Some(_), Integration::CentralCritic) => Paths {
                distributed: false,
                proxy: phase == Phase::Train,
            },
            (Some(c), _) => Paths {
                distributed: c.config().mode.distributed(),
                proxy: c.config().mode.proxy(),
            },
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        obs: &[Vec<f64>],
        ctx: &StepContext<'_>,
        phase: Phase,
        with_values: bool,
    ) -> Result<StepOutput> {
        let n = self.n_agents;
        if obs.len() != n {
            return Err(Error::config(format!("{} observations for {n} agents", obs.len())));
        }
        let o = obs
            .iter()
            .map(|row| {
                if row.len() != self.d_obs {
                    return Err(Error::config(format!(
                        "observation width {} does not match the policy's {}",
                        row.len(),
                        self.d_obs
                    )));
                }
                Ok(t.constant(DenseMatrix::from_vec(1, row.len(), row.clone())?))
            })
            .collect::<Result<Vec<_>>>()?;

        let (h, critic, comm, views) = match &self.comm {
            None => (o.clone(), None, CommStepTrace::default(), Vec::new()),
            Some(pipe) => {
                let out = pipe.forward(t, store, &o, ctx, self.paths(phase))?;
                let h = match (&out.distributed, &out.proxy) {
                    (Some(d), _) => d.clone(),
                    (None, Some(p)) => p.rows.clone(),
                    (None, None) => o.clone(),
                };
                let critic = match (&out.proxy, self.integration) {
                    (Some(p), Integration::CentralCritic) => {
                        let mean = t.constant(DenseMatrix::filled(1, n, 1.0 / n as f64));
                        let pooled = t.matmul(mean, p.joint)?;
                        Some(
                            p.rows
                                .iter()
                                .map(|&r| t.concat_cols(&[r, pooled]))
                                .collect::<Result<Vec<_>>>()?,
                        )
                    }
                    _ => None,
                };
                (h, critic, out.trace, out.views)
            }
        };

        let mut log_probs = Vec::with_capacity(n);
        let mut values = with_values.then(|| Vec::with_capacity(n));
        for i in 0..n {
            let head = self.head(i);
            let (pi_in, v_in) = match (&self.comm, self.integration) {
                (None, _) => (o[i], o[i]),
                (Some(_), Integration::Policy) => (h[i], o[i]),
                (Some(_), Integration::Value | Integration::PolicyAndValue) => (h[i], h[i]),
                (Some(_), Integration::CentralCritic) => {
                    let v_in = match &critic {
                        Some(c) => c[i],
                        None if !with_values => o[i],
                        None => return Err(Error::contract("the central critic needs the proxy pass")),
                    };
                    (o[i], v_in)
                }
            };
            let logits = head.policy.forward(t, store, pi_in)?;
            log_probs.push(t.log_softmax_rows(logits)?);
            if let Some(vs) = values.as_mut() {
                vs.push(head.value.forward(t, store, v_in)?);
            }
        }
        Ok(StepOutput {
            log_probs,
            values,
            comm,
            views,
        })
    }
}
