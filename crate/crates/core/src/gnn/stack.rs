use std::fmt;
use std::str::FromStr;

use super::{Aggregator, GatLayer, GcnLayer, GnnLayer, GraphView, MessageFn, MpnnLayer, UpdateFn};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::numeric::{ParamStore, Tape, Var};

/// Hidden width of the message and update perceptrons of MPNN layers.
pub const MPNN_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Gcn,
    Gat,
    Mpnn(Aggregator),
}

/// Declarative description of one layer: family, output width and an
/// optional activation override.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub d_out: usize,
    pub activation: Option<Activation>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, d_out: usize) -> Self {
        Self {
            kind,
            d_out,
            activation: None,
        }
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activation = Some(act);
        self
    }

    fn default_activation(&self) -> Activation {
        match self.kind {
            LayerKind::Gcn => Activation::Relu,
            LayerKind::Gat | LayerKind::Mpnn(_) => Activation::Identity,
        }
    }

    pub fn build(&self, store: &mut ParamStore, prefix: &str, d_in: usize) -> Result<GnnLayer> {
        if self.d_out == 0 {
            return Err(Error::config(format!("layer `{prefix}` has zero width")));
        }
        let act = self.activation.unwrap_or_else(|| self.default_activation());
        Ok(match self.kind {
            LayerKind::Gcn => GnnLayer::Gcn(GcnLayer::new(store, prefix, d_in, self.d_out, act)?),
            LayerKind::Gat => GnnLayer::Gat(GatLayer::new(store, prefix, d_in, self.d_out, act)?),
            LayerKind::Mpnn(agg) => GnnLayer::Mpnn(MpnnLayer::new(
                store,
                prefix,
                d_in,
                self.d_out,
                0,
                MessageFn::Perceptron { hidden: MPNN_HIDDEN },
                agg,
                UpdateFn::Perceptron { hidden: MPNN_HIDDEN },
                act,
            )?),
        })
    }
}

/// Text form `kind:width[:activation]`, e.g. `gcn:32:tanh` or
/// `mpnn_attention:16`.
impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(Error::config(format!("layer `{s}`: expected kind:width[:activation]")));
        }
        let kind = match parts[0] {
            "gcn" => LayerKind::Gcn,
            "gat" => LayerKind::Gat,
            "mpnn" | "mpnn_sum" => LayerKind::Mpnn(Aggregator::Sum),
            "mpnn_mean" => LayerKind::Mpnn(Aggregator::Mean),
            "mpnn_max" => LayerKind::Mpnn(Aggregator::Max),
            "mpnn_attention" => LayerKind::Mpnn(Aggregator::Attention),
            other => return Err(Error::config(format!("unknown layer kind `{other}`"))),
        };
        let d_out = parts[1]
            .parse()
            .map_err(|_| Error::config(format!("layer `{s}`: bad width")))?;
        let mut spec = LayerSpec::new(kind, d_out);
        if let Some(act) = parts.get(2) {
            spec.activation = Some(Activation::parse(act)?);
        }
        Ok(spec)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            LayerKind::Gcn => "gcn",
            LayerKind::Gat => "gat",
            LayerKind::Mpnn(Aggregator::Sum) => "mpnn",
            LayerKind::Mpnn(Aggregator::Mean) => "mpnn_mean",
            LayerKind::Mpnn(Aggregator::Max) => "mpnn_max",
            LayerKind::Mpnn(Aggregator::Attention) => "mpnn_attention",
        };
        write!(f, "{kind}:{}", self.d_out)?;
        match self.activation {
            Some(Activation::Identity) => write!(f, ":identity"),
            Some(Activation::Relu) => write!(f, ":relu"),
            Some(Activation::Tanh) => write!(f, ":tanh"),
            None => Ok(()),
        }
    }
}

/// `L >= 1` layers with a compatible width chain.
#[derive(Clone, Debug)]
pub struct GnnStack {
    layers: Vec<GnnLayer>,
}

impl GnnStack {
    pub fn new(layers: Vec<GnnLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a GNN stack needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::config(format!(
                    "layer {} outputs width {} but layer {} expects {}",
                    l,
                    pair[0].d_out(),
                    l + 1,
                    pair[1].d_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Registers every layer under `{prefix}/l{index}`.
    pub fn build(store: &mut ParamStore, prefix: &str, d_in: usize, specs: &[LayerSpec]) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = d_in;
        for (l, spec) in specs.iter().enumerate() {
            let layer = spec.build(store, &format!("{prefix}/l{l}"), width)?;
            width = layer.d_out();
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[GnnLayer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &GnnLayer {
        &self.layers[l]
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// Widths of every layer output.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(GnnLayer::d_out).collect()
    }

    /// `H^(l) = layer_l(g, H^(l-1))` for `l = 1..L`, starting from `x`.
    pub fn forward(&self, t: &mut Tape, store: &ParamStore, g: GraphView<'_>, x: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(t, store, g, h)?;
            outs.push(h);
        }
        Ok(outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CommGraph;
    use crate::numeric::DenseMatrix;

    fn fig1() -> CommGraph {
        CommGraph::parse_edge_list(include_str!("../../../../fixtures/fig1.edges")).unwrap()
    }

    #[test]
    fn parse_and_display() {
        let spec: LayerSpec = "mpnn_attention:16".parse().unwrap();
        assert_eq!(spec.kind, LayerKind::Mpnn(Aggregator::Attention));
        assert_eq!(spec.to_string(), "mpnn_attention:16");
        let gcn: LayerSpec = "gcn:8:tanh".parse().unwrap();
        assert_eq!(gcn.activation, Some(Activation::Tanh));
        assert!("sage:8".parse::<LayerSpec>().is_err());
        assert!("gcn".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn width_chain_is_checked_at_construction() {
        let mut store = ParamStore::new(0);
        let a = LayerSpec::new(LayerKind::Gcn, 4).build(&mut store, "a", 3).unwrap();
        let b = LayerSpec::new(LayerKind::Gcn, 2).build(&mut store, "b", 5).unwrap();
        assert!(matches!(GnnStack::new(vec![a, b]), Err(Error::Config(_))));
        assert!(GnnStack::new(vec![]).is_err());
    }

    #[test]
    fn single_layer_stack_is_one_application() {
        let mut store = ParamStore::new(1);
        let stack = GnnStack::build(&mut store, "s", 2, &[LayerSpec::new(LayerKind::Gat, 3)]).unwrap();
        let g = fig1();
        let mut t = Tape::new();
        let x = t.constant(DenseMatrix::filled(6, 2, 0.5));
        let outs = stack.forward(&mut t, &store, GraphView::new(&g), x).unwrap();
        assert_eq!(outs.len(), 1);
        let direct = stack.layer(0).forward(&mut t, &store, GraphView::new(&g), x).unwrap();
        assert_eq!(t.value(outs[0]), t.value(direct));
    }

    fn row1_after_perturbing_node5(depth: usize) -> f64 {
        let mut store = ParamStore::new(5);
        let specs = vec![LayerSpec::new(LayerKind::Gcn, 3).with_activation(Activation::Tanh); depth];
        let stack = GnnStack::build(&mut store, "s", 3, &specs).unwrap();
        let g = fig1();
        let base = DenseMatrix::from_rows(&(0..6).map(|i| vec![0.1 * i as f64, -0.2, 0.3]).collect::<Vec<_>>()).unwrap();
        let mut moved = base.clone();
        moved.set(5, 0, 1.5);
        let run = |x: &DenseMatrix| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let outs = stack.forward(&mut t, &store, GraphView::new(&g), xv).unwrap();
            t.value(*outs.last().unwrap()).row(1).to_vec()
        };
        let a = run(&base);
        let b = run(&moved);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn two_hop_information_needs_two_layers() {
        assert_eq!(row1_after_perturbing_node5(1), 0.0);
        assert!(row1_after_perturbing_node5(2) > 1e-6);
    }
}
