use serde::{Deserialize, Serialize};

use super::{check_input, edges_by_target, scatter_to_targets, GraphView};
use crate::error::{Error, Result};
use crate::nn::{Activation, Linear, Mlp};
use crate::numeric::{DenseMatrix, ParamStore, Tape, Var};

/// How a message `phi(h_i, h_j, e_ji)` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageFn {
    /// `h_j W`, ignoring the receiver and edge features.
    SourceLinear,
    /// One-hidden-layer perceptron over `[h_i, h_j, e_ji]`.
    Perceptron { hidden: usize },
}

/// How `psi(h_i, aggregate)` produces the new representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateFn {
    /// The aggregate itself.
    TakeAggregate,
    /// One-hidden-layer perceptron over `[h_i, aggregate]`.
    Perceptron { hidden: usize },
}

/// Permutation-invariant reduction over a neighborhood's messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Mean,
    /// Elementwise max; an empty neighborhood yields zeros.
    Max,
    /// Softmax-weighted sum with scaled dot-product scores between the
    /// receiver's query and each message's key.
    Attention,
}

#[derive(Clone, Debug)]
enum Message {
    Linear(Linear),
    Mlp(Mlp),
}

#[derive(Clone, Debug)]
pub struct MpnnLayer {
    d_in: usize,
    d_out: usize,
    edge_dim: usize,
    message: Message,
    update: Option<Mlp>,
    aggregator: Aggregator,
    attention: Option<(Linear, Linear)>,
    activation: Activation,
}

impl MpnnLayer {
    /// Messages have width `d_out`; `edge_dim` is the edge feature width the
    /// perceptron message expects (0 for none).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        edge_dim: usize,
        message: MessageFn,
        aggregator: Aggregator,
        update: UpdateFn,
        activation: Activation,
    ) -> Result<Self> {
        let message = match message {
            MessageFn::SourceLinear => Message::Linear(Linear::new(store, &format!("{prefix}/phi"), d_in, d_out, false)?),
            MessageFn::Perceptron { hidden } => Message::Mlp(Mlp::new(
                store,
                &format!("{prefix}/phi"),
                &[2 * d_in + edge_dim, hidden, d_out],
                Activation::Tanh,
                Activation::Identity,
            )?),
        };
        let update = match update {
            UpdateFn::TakeAggregate => None,
            UpdateFn::Perceptron { hidden } => Some(Mlp::new(
                store,
                &format!("{prefix}/psi"),
                &[d_in + d_out, hidden, d_out],
                Activation::Tanh,
                Activation::Identity,
            )?),
        };
        let attention = match aggregator {
            Aggregator::Attention => Some((
                Linear::new(store, &format!("{prefix}/query"), d_in, d_out, false)?,
                Linear::new(store, &format!("{prefix}/key"), d_out, d_out, false)?,
            )),
            _ => None,
        };
        Ok(Self {
            d_in,
            d_out,
            edge_dim,
            message,
            update,
            aggregator,
            attention,
            activation,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    /// Parameter name of the linear message weight, when the message is linear.
    pub fn message_weight_name(&self) -> Option<&str> {
        match &self.message {
            Message::Linear(l) => Some(l.weight_name()),
            Message::Mlp(_) => None,
        }
    }

    fn edge_feature_matrix(&self, g: &GraphView<'_>) -> Result<DenseMatrix> {
        let feats = g.graph.edge_features().ok_or_else(|| {
            Error::config(format!("MPNN message expects {}-dim edge features", self.edge_dim))
        })?;
        if g.graph.edge_feature_dim() != self.edge_dim {
            return Err(Error::config(format!(
                "edge features have width {}, layer expects {}",
                g.graph.edge_feature_dim(),
                self.edge_dim
            )));
        }
        let data: Vec<f64> = g.graph.edges().flat_map(|e| feats[&e].iter().copied()).collect();
        DenseMatrix::from_vec(g.graph.edge_count(), self.edge_dim, data)
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, h: Var) -> Result<Var> {
        check_input(t, g.graph, h, self.d_in, "mpnn_forward")?;
        let n = g.graph.n();
        let (sources, targets) = g.edge_arrays();

        let messages = match &self.message {
            Message::Linear(lin) => {
                let hw = lin.forward(t, store, h)?;
                t.select_rows(hw, &sources)?
            }
            Message::Mlp(mlp) => {
                let h_recv = t.select_rows(h, &targets)?;
                let h_send = t.select_rows(h, &sources)?;
                let mut parts = vec![h_recv, h_send];
                if self.edge_dim > 0 {
                    let ef = self.edge_feature_matrix(&g)?;
                    parts.push(t.constant(ef));
                }
                let input = t.concat_cols(&parts)?;
                mlp.forward(t, store, input)?
            }
        };

        let aggregate = match self.aggregator {
            Aggregator::Sum => {
                let s = scatter_to_targets(t, n, &targets, |_| 1.0);
                t.matmul(s, messages)?
            }
            Aggregator::Mean => {
                let deg = g.graph.degrees();
                let s = scatter_to_targets(t, n, &targets, |k| 1.0 / deg[targets[k]] as f64);
                t.matmul(s, messages)?
            }
            Aggregator::Max => t.segment_max(messages, &edges_by_target(n, &targets))?,
            Aggregator::Attention => {
                let (query, key) = self.attention.as_ref().expect("attention weights registered");
                let q = query.forward(t, store, h)?;
                let q_e = t.select_rows(q, &targets)?;
                let k_e = key.forward(t, store, messages)?;
                let prod = t.mul(q_e, k_e)?;
                let dots = t.row_sums(prod)?;
                let logits = t.scale(dots, 1.0 / (self.d_out as f64).sqrt())?;
                let segments: Vec<Vec<usize>> = edges_by_target(n, &targets)
                    .into_iter()
                    .filter(|s| !s.is_empty())
                    .collect();
                let alpha = t.segment_softmax(logits, &segments)?;
                let alpha_b = t.repeat_col(alpha, self.d_out)?;
                let weighted = t.mul(messages, alpha_b)?;
                let s = scatter_to_targets(t, n, &targets, |_| 1.0);
                t.matmul(s, weighted)?
            }
        };

        let out = match &self.update {
            None => aggregate,
            Some(mlp) => {
                let input = t.concat_cols(&[h, aggregate])?;
                mlp.forward(t, store, input)?
            }
        };
        self.activation.apply(t, out)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::gnn::GcnLayer;
    use crate::graph::CommGraph;

    fn sum_layer(store: &mut ParamStore, d: usize, agg: Aggregator) -> MpnnLayer {
        let layer = MpnnLayer::new(
            store,
            "mp",
            d,
            d,
            0,
            MessageFn::SourceLinear,
            agg,
            UpdateFn::TakeAggregate,
            Activation::Identity,
        )
        .unwrap();
        store.set_value("mp/phi/w", DenseMatrix::identity(d)).unwrap();
        layer
    }

    #[test]
    fn identity_sum_is_adjacency_sum() {
        let mut store = ParamStore::new(0);
        let layer = sum_layer(&mut store, 2, Aggregator::Sum);
        let g = CommGraph::new(3, [(0, 2), (1, 2), (2, 0)], false).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0], vec![-1.0, 0.5]]).unwrap();
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        let out = layer.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        let expected = g.adjacency().transpose().matmul(&x).unwrap();
        assert_eq!(t.value(out), &expected);
    }

    #[test]
    fn max_with_single_neighbor_is_that_message() {
        let mut store = ParamStore::new(0);
        let layer = sum_layer(&mut store, 2, Aggregator::Max);
        let g = CommGraph::new(2, [(0, 1)], false).unwrap();
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::from_rows(&[vec![-3.0, 4.0], vec![0.0, 0.0]]).unwrap());
        let out = layer.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        assert_eq!(t.value(out).row(1), &[-3.0, 4.0]);
        assert_eq!(t.value(out).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn mean_mpnn_matches_gcn_on_regular_graph() {
        let mut store = ParamStore::new(17);
        let gcn = GcnLayer::new(&mut store, "gcn", 3, 2, Activation::Identity).unwrap();
        let mp = MpnnLayer::new(
            &mut store,
            "mp",
            3,
            2,
            0,
            MessageFn::SourceLinear,
            Aggregator::Mean,
            UpdateFn::TakeAggregate,
            Activation::Identity,
        )
        .unwrap();
        let w = store.value("gcn/w").unwrap().clone();
        store.set_value("mp/phi/w", w).unwrap();
        // 3-regular, self-loop free: i receives from i+1, i+2, i+3 (mod 6).
        let edges = (0..6).flat_map(|i| (1..=3).map(move |k| ((i + k) % 6, i)));
        let g = CommGraph::new(6, edges, false).unwrap();
        let x = DenseMatrix::from_rows(&(0..6).map(|i| vec![i as f64 * 0.1, 1.0 - i as f64, 0.5]).collect::<Vec<_>>()).unwrap();
        let mut t = Tape::new();
        let h = t.constant(x);
        let a = gcn.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        let b = mp.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        assert!(t.value(a).max_abs_diff(t.value(b)).unwrap() < 1e-12);
    }

    #[test]
    fn perceptron_messages_consume_edge_features() {
        let mut store = ParamStore::new(2);
        let layer = MpnnLayer::new(
            &mut store,
            "mp",
            2,
            3,
            1,
            MessageFn::Perceptron { hidden: 4 },
            Aggregator::Sum,
            UpdateFn::Perceptron { hidden: 4 },
            Activation::Identity,
        )
        .unwrap();
        let g = CommGraph::new(2, [(0, 1)], false).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.5, -0.5], vec![1.0, 0.0]]).unwrap();
        let eval = |feature: f64| {
            let gf = g.clone().with_edge_features(BTreeMap::from([((0, 1), vec![feature])])).unwrap();
            let mut t = Tape::new();
            let h = t.constant(x.clone());
            let out = layer.forward(&mut t, &store, GraphView::new(&gf), h).unwrap();
            t.value(out).clone()
        };
        let a = eval(0.0);
        let b = eval(2.0);
        assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
        // Missing edge features are a configuration error.
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        assert!(matches!(layer.forward(&mut t, &store, GraphView::new(&g), h), Err(Error::Config(_))));
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let mut store = ParamStore::new(8);
        let layer = sum_layer(&mut store, 2, Aggregator::Attention);
        // With identical messages the softmax-weighted sum returns that message.
        let g = CommGraph::new(4, [(0, 3), (1, 3), (2, 3)], false).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0], vec![0.3, 0.1]]).unwrap();
        let mut t = Tape::new();
        let h = t.constant(x);
        let out = layer.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        assert!((t.value(out).get(3, 0) - 1.0).abs() < 1e-12);
        assert!((t.value(out).get(3, 1) - 2.0).abs() < 1e-12);
    }
}
