//! Graph neural network layers: degree-normalized convolution, attention,
//! and generic message passing, plus stacking.

mod gat;
mod gcn;
mod mpnn;
mod stack;

pub use gat::GatLayer;
pub use gcn::GcnLayer;
pub use mpnn::{Aggregator, MessageFn, MpnnLayer, UpdateFn};
pub use stack::{GnnStack, LayerKind, LayerSpec};

use crate::error::Result;
use crate::graph::CommGraph;
use crate::numeric::{DenseMatrix, ParamStore, Tape, Var};

/// A graph as seen by a layer: its structure plus optional differentiable
/// edge weights, one row per edge in `graph.edges()` order.
#[derive(Clone, Copy, Debug)]
pub struct GraphView<'a> {
    pub graph: &'a CommGraph,
    pub edge_weights: Option<Var>,
}

impl<'a> GraphView<'a> {
    pub fn new(graph: &'a CommGraph) -> Self {
        Self {
            graph,
            edge_weights: None,
        }
    }

    pub fn weighted(graph: &'a CommGraph, edge_weights: Var) -> Self {
        Self {
            graph,
            edge_weights: Some(edge_weights),
        }
    }

    pub(crate) fn edge_arrays(&self) -> (Vec<usize>, Vec<usize>) {
        self.graph.edges().unzip()
    }

    /// Per-edge weights as an `E x 1` column: the learned ones if present,
    /// otherwise the graph's stored weights (1 when unweighted).
    pub(crate) fn weight_column(&self, t: &mut Tape) -> Var {
        if let Some(w) = self.edge_weights {
            return w;
        }
        let data: Vec<f64> = self.graph.edges().map(|(j, i)| self.graph.weight(j, i)).collect();
        let e = data.len();
        t.constant(DenseMatrix::from_raw(e, 1, data))
    }
}

/// `n x E` matrix summing edge rows into their target node.
pub(crate) fn scatter_to_targets(t: &mut Tape, n: usize, targets: &[usize], coef: impl Fn(usize) -> f64) -> Var {
    let e = targets.len();
    let mut data = vec![0.0; n * e];
    for (k, &i) in targets.iter().enumerate() {
        data[i * e + k] = coef(k);
    }
    t.constant(DenseMatrix::from_raw(n, e, data))
}

/// Edge indices grouped by target node (empty groups kept).
pub(crate) fn edges_by_target(n: usize, targets: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n];
    for (k, &i) in targets.iter().enumerate() {
        groups[i].push(k);
    }
    groups
}

/// One GNN layer of any supported family.
#[derive(Clone, Debug)]
pub enum GnnLayer {
    Gcn(GcnLayer),
    Gat(GatLayer),
    Mpnn(MpnnLayer),
}

impl GnnLayer {
    pub fn d_in(&self) -> usize {
        match self {
            GnnLayer::Gcn(l) => l.d_in(),
            GnnLayer::Gat(l) => l.d_in(),
            GnnLayer::Mpnn(l) => l.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            GnnLayer::Gcn(l) => l.d_out(),
            GnnLayer::Gat(l) => l.d_out(),
            GnnLayer::Mpnn(l) => l.d_out(),
        }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, h: Var) -> Result<Var> {
        match self {
            GnnLayer::Gcn(l) => l.forward(t, store, g, h),
            GnnLayer::Gat(l) => l.forward(t, store, g, h),
            GnnLayer::Mpnn(l) => l.forward(t, store, g, h),
        }
    }
}

pub(crate) fn check_input(t: &Tape, g: &CommGraph, h: Var, d_in: usize, op: &'static str) -> Result<()> {
    let shape = t.shape(h);
    if shape != (g.n(), d_in) {
        return Err(crate::Error::Dimension {
            op,
            lhs: shape,
            rhs: (g.n(), d_in),
        });
    }
    Ok(())
}
