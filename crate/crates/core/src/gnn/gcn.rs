use super::{check_input, scatter_to_targets, GraphView};
use crate::error::Result;
use crate::nn::Activation;
use crate::numeric::{ParamStore, Tape, Var};

/// Degree-normalized graph convolution:
/// `h_i = act( sum_{j in N(i)} ew_ji / sqrt(deg(i) deg(j)) * h_j W )`.
///
/// A source with no incoming edges is counted with degree 1. A node with an
/// empty neighborhood gets `act(0)`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    weight: String,
    d_in: usize,
    d_out: usize,
    activation: Activation,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, activation: Activation) -> Result<Self> {
        let weight = format!("{prefix}/w");
        store.register(&weight, d_in, d_out)?;
        Ok(Self {
            weight,
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

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, h: Var) -> Result<Var> {
        check_input(t, g.graph, h, self.d_in, "gcn_forward")?;
        let n = g.graph.n();
        let (sources, targets) = g.edge_arrays();
        let deg = g.graph.degrees();
        let w = t.param(store, &self.weight)?;
        let hw = t.matmul(h, w)?;
        let msgs = t.select_rows(hw, &sources)?;
        let ew = g.weight_column(t);
        let ew_b = t.repeat_col(ew, self.d_out)?;
        let weighted = t.mul(msgs, ew_b)?;
        let norm = scatter_to_targets(t, n, &targets, |k| {
            let di = deg[targets[k]] as f64;
            let dj = deg[sources[k]].max(1) as f64;
            1.0 / (di * dj).sqrt()
        });
        let agg = t.matmul(norm, weighted)?;
        self.activation.apply(t, agg)
    }
}
