use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::edges_by_target;
use crate::graph::CommGraph;
use crate::nn::Linear;
use crate::numeric::{ParamStore, Tape, Var};

/// Width of the projections behind learned pairwise scores.
pub const SCORE_DIM: usize = 8;

/// How a communication graph is derived from the payloads at hand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderKind {
    /// Every pair connected; edge weights are a per-target softmax of
    /// learned pairwise scores.
    CompleteWeighted,
    /// Symmetric unweighted edges between nodes within range.
    RangeSparse,
    /// Each node keeps in-edges from its `k` highest-scoring sources.
    TopK(usize),
}

impl BuilderKind {
    fn has_scores(self) -> bool {
        matches!(self, BuilderKind::CompleteWeighted | BuilderKind::TopK(_))
    }
}

impl FromStr for BuilderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete_weighted" => Ok(BuilderKind::CompleteWeighted),
            "range_sparse" => Ok(BuilderKind::RangeSparse),
            _ => {
                let k = s
                    .strip_prefix("topk_attention")
                    .or_else(|| s.strip_prefix("topk"))
                    .and_then(|rest| rest.strip_prefix(':'))
                    .ok_or_else(|| Error::config(format!("unknown graph builder `{s}`")))?;
                let k = k
                    .parse()
                    .map_err(|_| Error::config(format!("graph builder `{s}`: bad k")))?;
                Ok(BuilderKind::TopK(k))
            }
        }
    }
}

impl fmt::Display for BuilderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuilderKind::CompleteWeighted => f.write_str("complete_weighted"),
            BuilderKind::RangeSparse => f.write_str("range_sparse"),
            BuilderKind::TopK(k) => write!(f, "topk_attention:{k}"),
        }
    }
}

/// A graph over the local node list plus optional differentiable edge
/// weights in `graph.edges()` order.
#[derive(Clone, Debug)]
pub struct BuiltGraph {
    pub graph: CommGraph,
    pub weights: Option<Var>,
}

/// One graph-building function with its own score parameters.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    kind: BuilderKind,
    scores: Option<(Linear, Linear)>,
}

impl GraphBuilder {
    pub fn new(store: &mut ParamStore, prefix: &str, kind: BuilderKind, d_in: usize) -> Result<Self> {
        if let BuilderKind::TopK(0) = kind {
            return Err(Error::config("topk builder needs k >= 1"));
        }
        let scores = if kind.has_scores() {
            Some((
                Linear::new(store, &format!("{prefix}/query"), d_in, SCORE_DIM, false)?,
                Linear::new(store, &format!("{prefix}/key"), d_in, SCORE_DIM, false)?,
            ))
        } else {
            None
        };
        Ok(Self { kind, scores })
    }

    pub fn kind(&self) -> BuilderKind {
        self.kind
    }

    /// Parameter names of the query and key projections, if any.
    pub fn score_params(&self) -> Option<(&str, &str)> {
        self.scores.as_ref().map(|(q, k)| (q.weight_name(), k.weight_name()))
    }

    /// Builds a self-looped graph over `nodes` (global agent ids, ascending)
    /// whose features are the rows of `x`. `proximity` is the global
    /// within-range relation used by the sparse builder.
    pub fn build(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        nodes: &[usize],
        x: Var,
        proximity: &CommGraph,
    ) -> Result<BuiltGraph> {
        let m = nodes.len();
        if t.shape(x).0 != m {
            return Err(Error::Dimension {
                op: "graph_build",
                lhs: t.shape(x),
                rhs: (m, t.shape(x).1),
            });
        }
        match self.kind {
            BuilderKind::RangeSparse => {
                let mut edges = Vec::new();
                for (a, &ga) in nodes.iter().enumerate() {
                    for (b, &gb) in nodes.iter().enumerate() {
                        if a != b && (proximity.contains_edge(ga, gb) || proximity.contains_edge(gb, ga)) {
                            edges.push((a, b));
                        }
                    }
                }
                Ok(BuiltGraph {
                    graph: CommGraph::new(m, edges, true)?,
                    weights: None,
                })
            }
            BuilderKind::CompleteWeighted => {
                let graph = CommGraph::complete(m, true);
                let (sources, targets): (Vec<usize>, Vec<usize>) = graph.edges().unzip();
                let logits = self.edge_scores(t, store, x, &sources, &targets)?;
                let groups = edges_by_target(m, &targets);
                let weights = t.segment_softmax(logits, &groups)?;
                Ok(BuiltGraph {
                    graph,
                    weights: Some(weights),
                })
            }
            BuilderKind::TopK(k) => {
                let full = CommGraph::complete(m, false);
                let (sources, targets): (Vec<usize>, Vec<usize>) = full.edges().unzip();
                let mut edges = Vec::new();
                if !sources.is_empty() {
                    let logits = self.edge_scores(t, store, x, &sources, &targets)?;
                    let scores = t.value(logits).as_slice().to_vec();
                    for (i, group) in edges_by_target(m, &targets).into_iter().enumerate() {
                        let mut ranked: Vec<usize> = group;
                        // Highest score first; ties resolved towards the lower source id.
                        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(sources[a].cmp(&sources[b])));
                        edges.extend(ranked.into_iter().take(k).map(|e| (sources[e], i)));
                    }
                }
                Ok(BuiltGraph {
                    graph: CommGraph::new(m, edges, true)?,
                    weights: None,
                })
            }
        }
    }

    /// `E x 1` scaled dot products `q(x_i) . k(x_j) / sqrt(SCORE_DIM)`.
    fn edge_scores(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        x: Var,
        sources: &[usize],
        targets: &[usize],
    ) -> Result<Var> {
        let (query, key) = self
            .scores
            .as_ref()
            .ok_or_else(|| Error::contract("builder has no score parameters"))?;
        let q = query.forward(t, store, x)?;
        let k = key.forward(t, store, x)?;
        let qe = t.select_rows(q, targets)?;
        let ke = t.select_rows(k, sources)?;
        let prod = t.mul(qe, ke)?;
        let s = t.row_sums(prod)?;
        t.scale(s, 1.0 / (SCORE_DIM as f64).sqrt())
    }
}
