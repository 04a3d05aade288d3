use super::{check_input, edges_by_target, scatter_to_targets, GraphView};
use crate::error::Result;
use crate::nn::Activation;
use crate::numeric::{ParamStore, Tape, Var};

/// Slope of the leaky rectifier applied to raw attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Single-head graph attention: `h_i = sum_{j in N(i)} alpha_ji h_j W`.
///
/// Scores are `leaky_relu(a_src . z_j + a_dst . z_i)` with `z = h W`,
/// normalized by a softmax over each neighborhood.
#[derive(Clone, Debug)]
pub struct GatLayer {
    weight: String,
    att_src: String,
    att_dst: String,
    d_in: usize,
    d_out: usize,
    activation: Activation,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, activation: Activation) -> Result<Self> {
        let weight = format!("{prefix}/w");
        let att_src = format!("{prefix}/att_src");
        let att_dst = format!("{prefix}/att_dst");
        store.register(&weight, d_in, d_out)?;
        store.register(&att_src, d_out, 1)?;
        store.register(&att_dst, d_out, 1)?;
        Ok(Self {
            weight,
            att_src,
            att_dst,
            d_in,
            d_out,
            activation,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn attention_names(&self) -> (&str, &str) {
        (&self.att_src, &self.att_dst)
    }

    /// Transformed features `z = h W` and attention `alpha` (`E x 1`, in
    /// edge order).
    pub fn attention(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, h: Var) -> Result<(Var, Var)> {
        check_input(t, g.graph, h, self.d_in, "gat_forward")?;
        let (sources, targets) = g.edge_arrays();
        let w = t.param(store, &self.weight)?;
        let z = t.matmul(h, w)?;
        let a_src = t.param(store, &self.att_src)?;
        let a_dst = t.param(store, &self.att_dst)?;
        let s_src = t.matmul(z, a_src)?;
        let s_dst = t.matmul(z, a_dst)?;
        let from = t.select_rows(s_src, &sources)?;
        let to = t.select_rows(s_dst, &targets)?;
        let raw = t.add(from, to)?;
        let logits = t.leaky_relu(raw, ATTENTION_SLOPE)?;
        let segments: Vec<Vec<usize>> = edges_by_target(g.graph.n(), &targets)
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect();
        let alpha = t.segment_softmax(logits, &segments)?;
        Ok((z, alpha))
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, h: Var) -> Result<Var> {
        let (z, alpha) = self.attention(t, store, g, h)?;
        aggregate_attended(t, g, z, alpha, self.activation)
    }
}

/// `out_i = act( sum_e alpha_e z_{src(e)} )` over edges ending at `i`.
pub(crate) fn aggregate_attended(t: &mut Tape, g: GraphView<'_>, z: Var, alpha: Var, act: Activation) -> Result<Var> {
    let (sources, targets) = g.edge_arrays();
    let d = t.shape(z).1;
    let msgs = t.select_rows(z, &sources)?;
    let alpha_b = t.repeat_col(alpha, d)?;
    let weighted = t.mul(msgs, alpha_b)?;
    let scatter = scatter_to_targets(t, g.graph.n(), &targets, |_| 1.0);
    let agg = t.matmul(scatter, weighted)?;
    act.apply(t, agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CommGraph;
    use crate::numeric::{segment_softmax_values, DenseMatrix};

    fn fig1() -> CommGraph {
        CommGraph::parse_edge_list(include_str!("../../../../fixtures/fig1.edges")).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform_attention() {
        let mut store = ParamStore::new(3);
        let layer = GatLayer::new(&mut store, "gat", 2, 2, Activation::Identity).unwrap();
        // Zero attention vectors make every logit equal.
        store.set_value("gat/att_src", DenseMatrix::zeros(2, 1)).unwrap();
        store.set_value("gat/att_dst", DenseMatrix::zeros(2, 1)).unwrap();
        let g = fig1();
        let x = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![9.0, 9.0],
            vec![1.0, 2.0],
            vec![3.0, -1.0],
            vec![-2.0, 5.0],
            vec![7.0, 7.0],
        ])
        .unwrap();
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        let (_, alpha) = layer.attention(&mut t, &store, GraphView::new(&g), h).unwrap();
        let edges: Vec<_> = g.edges().collect();
        for (k, e) in edges.iter().enumerate() {
            if e.1 == 1 {
                assert!((t.value(alpha).get(k, 0) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let out = layer.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        let z = x.matmul(store.value("gat/w").unwrap()).unwrap();
        for c in 0..2 {
            let mean = (z.get(2, c) + z.get(3, c) + z.get(4, c)) / 3.0;
            assert!((t.value(out).get(1, c) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neighbor_passes_through() {
        let mut store = ParamStore::new(4);
        let layer = GatLayer::new(&mut store, "gat", 2, 3, Activation::Identity).unwrap();
        let g = CommGraph::new(2, [(0, 1)], false).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.4, -0.9], vec![1.0, 1.0]]).unwrap();
        let mut t = Tape::new();
        let h = t.constant(x.clone());
        let out = layer.forward(&mut t, &store, GraphView::new(&g), h).unwrap();
        let z = x.matmul(store.value("gat/w").unwrap()).unwrap();
        assert_eq!(t.value(out).row(1), z.row(0));
        // Node 0 has no neighbors.
        assert_eq!(t.value(out).row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_neighbors_with_log_two_logit_gap() {
        // Choose attention vectors so the raw scores are exactly (ln 2, 0).
        let mut store = ParamStore::new(0);
        let layer = GatLayer::new(&mut store, "gat", 1, 1, Activation::Identity).unwrap();
        store.set_value("gat/w", DenseMatrix::scalar(1.0).unwrap()).unwrap();
        store.set_value("gat/att_src", DenseMatrix::scalar(2f64.ln()).unwrap()).unwrap();
        store.set_value("gat/att_dst", DenseMatrix::scalar(0.0).unwrap()).unwrap();
        let g = CommGraph::new(3, [(0, 2), (1, 2)], false).unwrap();
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::column_vector(&[1.0, 0.0, 0.0]).unwrap());
        let (_, alpha) = layer.attention(&mut t, &store, GraphView::new(&g), h).unwrap();
        assert!((t.value(alpha).get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.value(alpha).get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        let direct = segment_softmax_values(&DenseMatrix::column_vector(&[2f64.ln(), 0.0]).unwrap(), &[vec![0, 1]]).unwrap();
        assert!(t.value(alpha).max_abs_diff(&direct).unwrap() < 1e-15);
    }
}
