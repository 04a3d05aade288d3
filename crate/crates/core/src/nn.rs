//! Small dense building blocks shared by encoders, GNN layers and heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => t.relu(x),
            Activation::Tanh => t.tanh(x),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// `x W + b` with the bias broadcast over rows.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let weight = format!("{prefix}/w");
        store.register(&weight, d_in, d_out)?;
        let bias = if bias {
            let name = format!("{prefix}/b");
            store.register_zeros(&name, 1, d_out)?;
            Some(name)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
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

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = t.param(store, &self.weight)?;
        let xw = t.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = t.param(store, b)?;
                let rows = t.shape(x).0;
                let bb = t.repeat_row(b, rows)?;
                t.add(xw, bb)
            }
            None => Ok(xw),
        }
    }
}

/// Multi-layer perceptron with a shared hidden activation and a
/// configurable output activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `dims` lists input, hidden and output widths; at least two entries.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an MLP needs input and output widths"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{prefix}/l{k}"), w[0], w[1], true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, hidden, output })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, cols) = t.shape(x);
        if cols != self.d_in() {
            return Err(Error::Dimension {
                op: "mlp",
                lhs: t.shape(x),
                rhs: (self.d_in(), self.d_out()),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, store, h)?;
            let act = if k == last { self.output } else { self.hidden };
            h = act.apply(t, h)?;
        }
        Ok(h)
    }
}
