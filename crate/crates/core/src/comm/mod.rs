//! The generic communication process: encode, exchange, build a graph,
//! aggregate with a GNN stack. Both the distributed variant (each agent
//! works on its own local view) and the proxy variant (one global graph)
//! are provided.

mod builder;
mod pipeline;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use builder::{BuilderKind, BuiltGraph, GraphBuilder, SCORE_DIM};
pub use pipeline::{CommOutput, CommPipeline, Paths, ProxyOutput, StepContext};

use crate::constraints::ChannelConfig;
use crate::error::{Error, Result};
use crate::gnn::LayerSpec;
use crate::graph::CommGraph;
use crate::numeric::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    Proxy,
    Distributed,
    /// Distributed representations for the agents plus a proxy pass.
    Both,
}

impl CommMode {
    pub fn distributed(self) -> bool {
        matches!(self, CommMode::Distributed | CommMode::Both)
    }

    pub fn proxy(self) -> bool {
        matches!(self, CommMode::Proxy | CommMode::Both)
    }
}

/// Maps an observation to the payload an agent sends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Identity,
    /// A single tanh layer of the given width.
    Perceptron(usize),
}

/// Who may receive an agent's messages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reachability {
    AllAgents,
    /// Agents within a range; `None` defers to the environment's range.
    NearAgents(Option<f64>),
}

impl FromStr for CommMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proxy" => Ok(CommMode::Proxy),
            "distributed" => Ok(CommMode::Distributed),
            "both" => Ok(CommMode::Both),
            other => Err(Error::config(format!("unknown comm mode `{other}`"))),
        }
    }
}

impl fmt::Display for CommMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommMode::Proxy => "proxy",
            CommMode::Distributed => "distributed",
            CommMode::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommConfig {
    pub mode: CommMode,
    pub encoder: Encoder,
    pub reachability: Reachability,
    pub builder: BuilderKind,
    /// One entry per aggregation layer; its length is `L`.
    pub layers: Vec<LayerSpec>,
    pub multi_round: bool,
    pub evolve_relation: bool,
    pub concat_raw_obs: bool,
    /// Read out the concatenation of every layer's output instead of the last.
    pub concat_layers: bool,
    /// One parameter set for all agents (and the proxy).
    pub parameter_sharing: bool,
}

impl CommConfig {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("communication needs at least one aggregation layer"));
        }
        if let Encoder::Perceptron(0) = self.encoder {
            return Err(Error::config("perceptron encoder width must be positive"));
        }
        if self.mode.proxy() && self.reachability != Reachability::AllAgents {
            return Err(Error::config("proxy requires all_agents reachability"));
        }
        if let Reachability::NearAgents(Some(r)) = self.reachability {
            if !(r >= 0.0) {
                return Err(Error::config(format!("reachability range {r} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// A transmitted payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub payload: Vec<f64>,
    /// Exchange round, 1 for the initial send.
    pub round: usize,
    pub timestep: usize,
}

/// What one agent ends up with after communicating.
#[derive(Clone, Debug)]
pub struct LocalView {
    pub owner: usize,
    /// Round-one messages by sender.
    pub received: BTreeMap<usize, Message>,
    /// Global ids of the local graph's nodes, ascending.
    pub nodes: Vec<usize>,
    /// First-layer graph over `nodes` (local indices).
    pub local_graph: CommGraph,
    /// Per-layer representations of the nodes the agent computed. In
    /// multi-round mode only nodes whose update arrived are present; the
    /// matching global ids are in `layer_nodes`.
    pub representations: Vec<DenseMatrix>,
    pub layer_nodes: Vec<Vec<usize>>,
}

impl LocalView {
    /// The owner's row in the layer-`l` representation (0-based layer).
    pub fn own_row(&self, l: usize) -> Result<Vec<f64>> {
        self.row_of(l, self.owner)
    }

    /// Row of global agent `j` in the layer-`l` representation.
    pub fn row_of(&self, l: usize, j: usize) -> Result<Vec<f64>> {
        let nodes = self.layer_nodes.get(l).ok_or(Error::Index {
            what: "layer",
            index: l,
            len: self.layer_nodes.len(),
        })?;
        let pos = nodes
            .iter()
            .position(|&k| k == j)
            .ok_or_else(|| Error::contract(format!("agent {j} is not part of agent {}'s view", self.owner)))?;
        Ok(self.representations[l].row(pos).to_vec())
    }
}

/// Global link structure for one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// Edge `(j, i)`: `j` may send to `i`.
    pub links: CommGraph,
    /// Within-range relation used by the sparse graph builder.
    pub proximity: CommGraph,
}

impl Topology {
    /// Everyone reaches everyone.
    pub fn complete(n: usize) -> Self {
        Self {
            links: CommGraph::complete(n, false),
            proximity: CommGraph::complete(n, false),
        }
    }

    /// Same relation for sending and for graph building.
    pub fn from_links(links: CommGraph) -> Self {
        Self {
            proximity: links.clone(),
            links,
        }
    }

    /// Links from grid positions. `env_range` is the environment's
    /// communication range; the channel's range, if any, caps it.
    pub fn from_positions(
        positions: &[(usize, usize)],
        reach: Reachability,
        env_range: f64,
        channel: &ChannelConfig,
    ) -> Result<Self> {
        let n = positions.len();
        let cap = |r: f64| channel.range.map_or(r, |c| c.min(r));
        let near = match reach {
            Reachability::AllAgents => None,
            Reachability::NearAgents(r) => Some(r.unwrap_or(env_range)),
        };
        let within = |r: f64| -> Result<CommGraph> {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in reachable_set(positions, r, i)? {
                    edges.push((j, i));
                }
            }
            CommGraph::new(n, edges, false)
        };
        let proximity = within(cap(near.unwrap_or(env_range)))?;
        let links = match (near, channel.range) {
            (Some(_), _) => proximity.clone(),
            (None, Some(c)) => within(c)?,
            (None, None) => CommGraph::complete(n, false),
        };
        Ok(Self { links, proximity })
    }
}

/// Chebyshev distance on the grid.
pub fn grid_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) as f64
}

/// Agents other than `i` within distance `r` of agent `i`.
pub fn reachable_set(positions: &[(usize, usize)], r: f64, i: usize) -> Result<Vec<usize>> {
    if !(r >= 0.0) {
        return Err(Error::contract(format!("communication range {r} must be >= 0")));
    }
    let pi = *positions.get(i).ok_or(Error::Index {
        what: "agent",
        index: i,
        len: positions.len(),
    })?;
    Ok((0..positions.len())
        .filter(|&j| j != i && grid_distance(pi, positions[j]) <= r)
        .collect())
}

/// Short hex digest of a payload's exact bits.
pub fn payload_digest(payload: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in payload {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Per-agent record of one communication step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentCommTrace {
    pub payload_digest: Option<String>,
    pub received_from: Vec<usize>,
    /// First-layer local graph as global `(source, target)` pairs.
    pub graph_edges: Vec<(usize, usize)>,
    pub repr_norm: f64,
    pub messages_sent: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommStepTrace {
    pub agents: Vec<AgentCommTrace>,
    /// Agent-to-agent transmissions attempted, across all rounds.
    pub inter_agent_messages: usize,
    /// Uploads to and downloads from the proxy.
    pub proxy_messages: usize,
}

impl CommStepTrace {
    pub fn total_messages(&self) -> usize {
        self.inter_agent_messages + self.proxy_messages
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reachable_examples() {
        let pos = [(0, 0), (1, 1), (3, 3)];
        assert_eq!(reachable_set(&pos, 2.0, 0).unwrap(), vec![1]);
        assert!(reachable_set(&pos, 0.0, 0).unwrap().is_empty());
        assert_eq!(reachable_set(&pos, 10.0, 2).unwrap(), vec![0, 1]);
        assert!(reachable_set(&pos, -1.0, 0).is_err());
    }

    #[test]
    fn topology_respects_channel_range() {
        let pos = [(0, 0), (1, 1), (3, 3)];
        let free = Topology::from_positions(&pos, Reachability::AllAgents, 2.0, &ChannelConfig::default()).unwrap();
        assert_eq!(free.links, CommGraph::complete(3, false));
        assert!(!free.proximity.contains_edge(2, 0));
        let capped = ChannelConfig {
            range: Some(1.0),
            ..Default::default()
        };
        let near = Topology::from_positions(&pos, Reachability::NearAgents(None), 5.0, &capped).unwrap();
        assert!(near.links.contains_edge(1, 0) && !near.links.contains_edge(2, 1));
        let all = Topology::from_positions(&pos, Reachability::AllAgents, 5.0, &capped).unwrap();
        assert_eq!(all.links, near.links);
    }

    #[test]
    fn digest_is_bit_sensitive() {
        assert_eq!(payload_digest(&[1.0, 2.0]), payload_digest(&[1.0, 2.0]));
        assert_ne!(payload_digest(&[0.0]), payload_digest(&[-0.0]));
        assert_eq!(payload_digest(&[]).len(), 16);
    }
}
