use std::collections::BTreeMap;

use super::{
    payload_digest, AgentCommTrace, BuiltGraph, CommConfig, CommStepTrace, Encoder, GraphBuilder, LocalView, Message,
    Topology,
};
use crate::constraints::{transmit, ChannelConfig, MessageId};
use crate::error::{Error, Result};
use crate::gnn::{GnnStack, GraphView};
use crate::nn::{Activation, Linear};
use crate::numeric::{ParamStore, Tape, Var};

/// Everything outside the agents that a communication step depends on.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub episode: u64,
    pub timestep: usize,
    pub topology: &'a Topology,
    pub channel: &'a ChannelConfig,
    /// Agents allowed to send this step; `None` means all of them.
    pub senders: Option<&'a [bool]>,
}

/// Which communication paths to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Paths {
    pub distributed: bool,
    pub proxy: bool,
}

#[derive(Clone, Debug)]
pub struct ProxyOutput {
    /// Joint readout, one row per agent.
    pub joint: Var,
    pub rows: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct CommOutput {
    /// Per-agent `1 x readout_dim` representations from the distributed path.
    pub distributed: Option<Vec<Var>>,
    pub proxy: Option<ProxyOutput>,
    pub views: Vec<LocalView>,
    pub trace: CommStepTrace,
}

/// Parameters one agent (or the proxy) computes with.
#[derive(Clone, Debug)]
struct Unit {
    encoder: Option<Linear>,
    builders: Vec<GraphBuilder>,
    stack: GnnStack,
}

impl Unit {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &CommConfig, d_obs: usize, with_encoder: bool) -> Result<Self> {
        let d_x = payload_width(cfg, d_obs);
        let encoder = match cfg.encoder {
            Encoder::Perceptron(dim) if with_encoder => Some(Linear::new(store, &format!("{prefix}/encoder"), d_obs, dim, true)?),
            _ => None,
        };
        let stack = GnnStack::build(store, &format!("{prefix}/gnn"), d_x, &cfg.layers)?;
        let n_builders = if cfg.evolve_relation { cfg.depth() } else { 1 };
        let builders = (0..n_builders)
            .map(|l| {
                let d_in = if l == 0 { d_x } else { stack.layer(l - 1).d_out() };
                GraphBuilder::new(store, &format!("{prefix}/builder{l}"), cfg.builder, d_in)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            builders,
            stack,
        })
    }

    /// Builder for the graph feeding layer `l`.
    fn builder(&self, l: usize) -> &GraphBuilder {
        &self.builders[l.min(self.builders.len() - 1)]
    }
}

fn payload_width(cfg: &CommConfig, d_obs: usize) -> usize {
    match cfg.encoder {
        Encoder::Identity => d_obs,
        Encoder::Perceptron(dim) => dim,
    }
}

/// Encoder, graph builders and GNN stack for a team of agents, wired
/// according to a [`CommConfig`].
#[derive(Clone, Debug)]
pub struct CommPipeline {
    cfg: CommConfig,
    n_agents: usize,
    d_obs: usize,
    agents: Vec<Unit>,
    proxy: Option<Unit>,
}

impl CommPipeline {
    /// Registers parameters under `comm/` when shared, otherwise under
    /// `agent{k}/comm/` per agent and `proxy/comm/` for the proxy.
    pub fn new(store: &mut ParamStore, cfg: CommConfig, n_agents: usize, d_obs: usize) -> Result<Self> {
        cfg.validate()?;
        if n_agents == 0 || d_obs == 0 {
            return Err(Error::config("communication needs at least one agent and a non-empty observation"));
        }
        let (agents, proxy) = if cfg.parameter_sharing {
            (vec![Unit::new(store, "comm", &cfg, d_obs, true)?], None)
        } else {
            let agents = (0..n_agents)
                .map(|k| Unit::new(store, &format!("agent{k}/comm"), &cfg, d_obs, true))
                .collect::<Result<Vec<_>>>()?;
            let proxy = if cfg.mode.proxy() {
                Some(Unit::new(store, "proxy/comm", &cfg, d_obs, false)?)
            } else {
                None
            };
            (agents, proxy)
        };
        Ok(Self {
            cfg,
            n_agents,
            d_obs,
            agents,
            proxy,
        })
    }

    pub fn config(&self) -> &CommConfig {
        &self.cfg
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn payload_dim(&self) -> usize {
        payload_width(&self.cfg, self.d_obs)
    }

    pub fn readout_dim(&self) -> usize {
        let widths = self.agents[0].stack.widths();
        let gnn = if self.cfg.concat_layers {
            widths.iter().sum()
        } else {
            widths[widths.len() - 1]
        };
        gnn + if self.cfg.concat_raw_obs { self.d_obs } else { 0 }
    }

    /// Parameter names of agent `k`'s graph-builder scores, per builder.
    pub fn builder_params(&self, k: usize) -> Vec<(String, String)> {
        self.unit(k)
            .builders
            .iter()
            .filter_map(|b| b.score_params().map(|(q, k)| (q.to_string(), k.to_string())))
            .collect()
    }

    fn unit(&self, k: usize) -> &Unit {
        if self.cfg.parameter_sharing {
            &self.agents[0]
        } else {
            &self.agents[k]
        }
    }

    fn proxy_unit(&self) -> &Unit {
        self.proxy.as_ref().unwrap_or(&self.agents[0])
    }

    /// Agent `k`'s payload for observation row `o` (`1 x d_obs`).
    pub fn encode(&self, t: &mut Tape, store: &ParamStore, k: usize, o: Var) -> Result<Var> {
        if t.shape(o).1 != self.d_obs {
            return Err(Error::config(format!(
                "observation has {} entries but the encoder expects {}",
                t.shape(o).1,
                self.d_obs
            )));
        }
        match &self.unit(k).encoder {
            None => Ok(o),
            Some(lin) => {
                let z = lin.forward(t, store, o)?;
                Activation::Tanh.apply(t, z)
            }
        }
    }

    fn readout(&self, t: &mut Tape, obs: Var, layers: &[Var]) -> Result<Var> {
        let mut parts = Vec::with_capacity(layers.len() + 1);
        if self.cfg.concat_raw_obs {
            parts.push(obs);
        }
        if self.cfg.concat_layers {
            parts.extend_from_slice(layers);
        } else {
            parts.push(layers[layers.len() - 1]);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            t.concat_cols(&parts)
        }
    }

    /// One communication step. `obs` holds one `1 x d_obs` row per agent.
    pub fn forward(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        obs: &[Var],
        ctx: &StepContext<'_>,
        paths: Paths,
    ) -> Result<CommOutput> {
        let n = self.n_agents;
        if obs.len() != n {
            return Err(Error::config(format!("{} observations for {n} agents", obs.len())));
        }
        if ctx.topology.links.n() != n || ctx.topology.proximity.n() != n {
            return Err(Error::config("topology size does not match the number of agents"));
        }
        if let Some(s) = ctx.senders {
            if s.len() != n {
                return Err(Error::config("sender mask size does not match the number of agents"));
            }
        }
        let mut trace = CommStepTrace {
            agents: vec![AgentCommTrace::default(); n],
            ..Default::default()
        };
        if !paths.distributed && !paths.proxy {
            return Ok(CommOutput {
                distributed: None,
                proxy: None,
                views: Vec::new(),
                trace,
            });
        }
        if paths.distributed && !self.cfg.mode.distributed() {
            return Err(Error::config(format!("mode `{}` has no distributed path", self.cfg.mode)));
        }
        if paths.proxy && !self.cfg.mode.proxy() {
            return Err(Error::config(format!("mode `{}` has no proxy", self.cfg.mode)));
        }
        let x: Vec<Var> = (0..n)
            .map(|k| self.encode(t, store, k, obs[k]))
            .collect::<Result<_>>()?;
        let active = |k: usize| ctx.senders.is_none_or(|s| s[k]);
        for (k, a) in trace.agents.iter_mut().enumerate() {
            if active(k) {
                a.payload_digest = Some(payload_digest(t.value(x[k]).as_slice()));
            }
        }

        let (distributed, views) = if paths.distributed {
            let (reprs, views) = self.run_distributed(t, store, obs, &x, ctx, &mut trace)?;
            (Some(reprs), views)
        } else {
            (None, Vec::new())
        };
        let proxy = if paths.proxy {
            if let Some(k) = (0..n).find(|&k| !active(k)) {
                return Err(Error::contract(format!("proxy is missing the payload of agent {k}")));
            }
            trace.proxy_messages = 2 * n;
            Some(self.run_proxy(t, store, obs, &x, ctx)?)
        } else {
            None
        };
        for k in 0..n {
            let r = match (&distributed, &proxy) {
                (Some(d), _) => d[k],
                (None, Some(p)) => p.rows[k],
                (None, None) => unreachable!("at least one path ran"),
            };
            trace.agents[k].repr_norm = t.value(r).frobenius_norm();
        }
        Ok(CommOutput {
            distributed,
            proxy,
            views,
            trace,
        })
    }

    fn run_proxy(&self, t: &mut Tape, store: &ParamStore, obs: &[Var], x: &[Var], ctx: &StepContext<'_>) -> Result<ProxyOutput> {
        let n = self.n_agents;
        let unit = self.proxy_unit();
        let nodes: Vec<usize> = (0..n).collect();
        let mut h = t.concat_rows(x)?;
        let mut g = unit.builder(0).build(t, store, &nodes, h, &ctx.topology.proximity)?;
        let mut outs = Vec::with_capacity(self.cfg.depth());
        for (l, layer) in unit.stack.layers().iter().enumerate() {
            if l > 0 && self.cfg.evolve_relation {
                g = unit.builder(l).build(t, store, &nodes, h, &ctx.topology.proximity)?;
            }
            h = layer.forward(t, store, view(&g), h)?;
            outs.push(h);
        }
        let obs_m = if self.cfg.concat_raw_obs { t.concat_rows(obs)? } else { obs[0] };
        let joint = self.readout(t, obs_m, &outs)?;
        let rows = (0..n).map(|k| t.select_rows(joint, &[k])).collect::<Result<Vec<_>>>()?;
        Ok(ProxyOutput { joint, rows })
    }

    fn run_distributed(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        obs: &[Var],
        x: &[Var],
        ctx: &StepContext<'_>,
        trace: &mut CommStepTrace,
    ) -> Result<(Vec<Var>, Vec<LocalView>)> {
        let n = self.n_agents;
        let depth = self.cfg.depth();
        let active = |k: usize| ctx.senders.is_none_or(|s| s[k]);
        let id = |round: usize, sender: usize, receiver: usize| MessageId {
            episode: ctx.episode,
            timestep: ctx.timestep,
            round,
            sender,
            receiver,
        };

        // Round one: payload exchange and the initial local graphs.
        let mut locals = Vec::with_capacity(n);
        for i in 0..n {
            let mut received = BTreeMap::new();
            for j in ctx.topology.links.neighbors(i)? {
                if j == i || !active(j) {
                    continue;
                }
                trace.agents[j].messages_sent += 1;
                trace.inter_agent_messages += 1;
                if let Some(v) = transmit(t, ctx.channel, x[j], &id(1, j, i))? {
                    received.insert(j, v);
                }
            }
            let mut rows = received.clone();
            rows.insert(i, x[i]);
            let nodes: Vec<usize> = rows.keys().copied().collect();
            let parts: Vec<Var> = rows.values().copied().collect();
            let x_loc = t.concat_rows(&parts)?;
            let g = self.unit(i).builder(0).build(t, store, &nodes, x_loc, &ctx.topology.proximity)?;
            let tr = &mut trace.agents[i];
            tr.received_from = received.keys().copied().collect();
            tr.graph_edges = g.graph.edges().map(|(a, b)| (nodes[a], nodes[b])).collect();
            let messages = received
                .iter()
                .map(|(&j, &v)| {
                    let m = Message {
                        sender: j,
                        payload: t.value(v).as_slice().to_vec(),
                        round: 1,
                        timestep: ctx.timestep,
                    };
                    (j, m)
                })
                .collect();
            locals.push((nodes, x_loc, g, messages));
        }

        let mut outs: Vec<Vec<Var>> = vec![Vec::with_capacity(depth); n];
        let mut reps: Vec<Vec<_>> = vec![Vec::with_capacity(depth); n];
        let mut layer_nodes: Vec<Vec<Vec<usize>>> = vec![Vec::with_capacity(depth); n];

        if !self.cfg.multi_round {
            // Each agent recomputes every layer for all nodes it heard from.
            for i in 0..n {
                let unit = self.unit(i);
                let (nodes, x_loc, g0, _) = &locals[i];
                let pos = position(nodes, i);
                let mut h = *x_loc;
                let mut g = g0.clone();
                for (l, layer) in unit.stack.layers().iter().enumerate() {
                    if l > 0 && self.cfg.evolve_relation {
                        g = unit.builder(l).build(t, store, nodes, h, &ctx.topology.proximity)?;
                    }
                    h = layer.forward(t, store, view(&g), h)?;
                    outs[i].push(t.select_rows(h, &[pos])?);
                    reps[i].push(t.value(h).clone());
                    layer_nodes[i].push(nodes.clone());
                }
            }
        } else {
            // Layer one on the round-one view, then exchange updated rows
            // before every further layer. Layers act as a barrier.
            let mut current: Vec<Var> = Vec::with_capacity(n);
            for i in 0..n {
                let (nodes, x_loc, g0, _) = &locals[i];
                let h = self.unit(i).stack.layer(0).forward(t, store, view(g0), *x_loc)?;
                let row = t.select_rows(h, &[position(nodes, i)])?;
                current.push(row);
                outs[i].push(row);
                reps[i].push(t.value(h).clone());
                layer_nodes[i].push(nodes.clone());
            }
            for l in 1..depth {
                let mut next = Vec::with_capacity(n);
                for i in 0..n {
                    let unit = self.unit(i);
                    let (nodes, x_loc, g0, _) = &locals[i];
                    let mut rows = BTreeMap::new();
                    rows.insert(i, current[i]);
                    for &j in nodes.iter().filter(|&&j| j != i && active(j)) {
                        trace.agents[j].messages_sent += 1;
                        trace.inter_agent_messages += 1;
                        if let Some(v) = transmit(t, ctx.channel, current[j], &id(l + 1, j, i))? {
                            rows.insert(j, v);
                        }
                    }
                    let alive: Vec<usize> = rows.keys().copied().collect();
                    let parts: Vec<Var> = rows.values().copied().collect();
                    let h_loc = t.concat_rows(&parts)?;
                    let g = if self.cfg.evolve_relation {
                        unit.builder(l).build(t, store, &alive, h_loc, &ctx.topology.proximity)?
                    } else if alive == *nodes {
                        g0.clone()
                    } else {
                        let idx: Vec<usize> = alive.iter().map(|&k| position(nodes, k)).collect();
                        let x_alive = t.select_rows(*x_loc, &idx)?;
                        unit.builder(0).build(t, store, &alive, x_alive, &ctx.topology.proximity)?
                    };
                    let h = unit.stack.layer(l).forward(t, store, view(&g), h_loc)?;
                    let row = t.select_rows(h, &[position(&alive, i)])?;
                    next.push(row);
                    outs[i].push(row);
                    reps[i].push(t.value(h).clone());
                    layer_nodes[i].push(alive);
                }
                current = next;
            }
        }

        let mut reprs = Vec::with_capacity(n);
        let mut views = Vec::with_capacity(n);
        for (i, ((nodes, _, g0, received), (o, (r, ln)))) in locals
            .into_iter()
            .zip(outs.into_iter().zip(reps.into_iter().zip(layer_nodes)))
            .enumerate()
        {
            reprs.push(self.readout(t, obs[i], &o)?);
            views.push(LocalView {
                owner: i,
                received,
                nodes,
                local_graph: g0.graph,
                representations: r,
                layer_nodes: ln,
            });
        }
        Ok((reprs, views))
    }
}

fn view(g: &BuiltGraph) -> GraphView<'_> {
    GraphView {
        graph: &g.graph,
        edge_weights: g.weights,
    }
}

fn position(nodes: &[usize], k: usize) -> usize {
    nodes.binary_search(&k).expect("node is part of the local view")
}
