//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! rule needed to push gradients to its parents. Nodes are appended in
//! evaluation order, so the parent graph is acyclic by construction and a
//! reverse sweep over node indices is a valid topological order.
//!
//! Gradients accumulate across [`Tape::backward`] calls until
//! [`Tape::zero_grads`] is invoked.

use std::collections::BTreeMap;

use super::matrix::DenseMatrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operators accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Relu,
    Tanh,
    Add,
    Mul,
    Scale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    SegmentSoftmax(Var, Vec<Vec<usize>>),
    /// For every output entry, the flat input index that won the max.
    SegmentMax(Var, Vec<Option<usize>>),
    LogSoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
    grad: Option<DenseMatrix>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros if nothing reached it yet.
    pub fn grad(&self, v: Var) -> DenseMatrix {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| DenseMatrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Parameters bound on this tape, by name.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn push(&mut self, value: DenseMatrix, op: Op, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            op => parents(op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input that is not a stored parameter.
    pub fn variable(&mut self, value: DenseMatrix) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        v
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        v
    }

    /// Binds a stored parameter as a leaf. Binding the same name twice
    /// returns the same node, so gradients from every use are summed.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store.value(name)?.clone();
        let v = self.variable(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match op {
            Elementwise::Relu => self.relu(operands[0]),
            Elementwise::Tanh => self.tanh(operands[0]),
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Scale(s) => self.scale(operands[0], s),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), "exp")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), "transpose")
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(a).select_rows(idx)?;
        self.push(value, Op::SelectRows(a, idx.to_vec()), "select_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_cols of nothing"));
        };
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for p in parts {
            let shape = self.shape(*p);
            if shape.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(*first),
                    rhs: shape,
                });
            }
            cols += shape.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = DenseMatrix::from_raw(rows, cols, data);
        self.push(value, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_rows of nothing"));
        };
        let cols = self.shape(*first).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let value = self.value(*p);
            if value.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(*first),
                    rhs: value.shape(),
                });
            }
            rows += value.rows();
            data.extend_from_slice(value.as_slice());
        }
        let value = DenseMatrix::from_raw(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::from_raw(1, 1, vec![self.value(a).sum()]);
        self.push(value, Op::SumAll(a), "sum")
    }

    /// Softmax of a column vector taken independently inside each segment.
    ///
    /// `segments` must partition `0..len`; every segment must be non-empty.
    pub fn segment_softmax(&mut self, logits: Var, segments: &[Vec<usize>]) -> Result<Var> {
        let value = segment_softmax_values(self.value(logits), segments)?;
        self.push(value, Op::SegmentSoftmax(logits, segments.to_vec()), "segment_softmax")
    }

    /// Row-wise max over groups of input rows: output row `g` is the
    /// elementwise max of the rows listed in `groups[g]`, or zeros when the
    /// group is empty.
    pub fn segment_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let input = self.value(a);
        let (rows, cols) = input.shape();
        let mut data = vec![0.0; groups.len() * cols];
        let mut argmax = vec![None; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            for &r in members {
                if r >= rows {
                    return Err(Error::Index {
                        what: "segment_max rows",
                        index: r,
                        len: rows,
                    });
                }
            }
            for c in 0..cols {
                let mut best: Option<(usize, f64)> = None;
                for &r in members {
                    let v = input.get(r, c);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
                if let Some((r, v)) = best {
                    data[g * cols + c] = v;
                    argmax[g * cols + c] = Some(r * cols + c);
                }
            }
        }
        let value = DenseMatrix::from_raw(groups.len(), cols, data);
        self.push(value, Op::SegmentMax(a, argmax), "segment_max")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        let (rows, cols) = input.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = input.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let value = DenseMatrix::from_raw(rows, cols, data);
        self.push(value, Op::LogSoftmaxRows(a), "log_softmax_rows")
    }

    /// `ones(n x 1) * row`: repeats a 1xd row n times.
    pub fn repeat_row(&mut self, row: Var, n: usize) -> Result<Var> {
        let ones = self.constant(DenseMatrix::filled(n, 1, 1.0));
        self.matmul(ones, row)
    }

    /// `col * ones(1 x d)`: repeats an nx1 column d times.
    pub fn repeat_col(&mut self, col: Var, d: usize) -> Result<Var> {
        let ones = self.constant(DenseMatrix::filled(1, d, 1.0));
        self.matmul(col, ones)
    }

    /// Row sums as an nx1 column.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let ones = self.constant(DenseMatrix::filled(self.shape(a).1, 1, 1.0));
        self.matmul(a, ones)
    }

    /// Accumulates d(root)/d(node) into every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar root, found {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adjoints: Vec<Option<DenseMatrix>> = Vec::new();
        adjoints.resize_with(root.0 + 1, || None);
        adjoints[root.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adjoints[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adjoints)?;
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut give = |v: Var, d: DenseMatrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    give(*a, g.matmul(&val(*b).transpose())?);
                }
                if wants(*b) {
                    give(*b, val(*a).transpose().matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                give(*a, g.clone());
                give(*b, g.clone());
            }
            Op::Sub(a, b) => {
                give(*a, g.clone());
                give(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    give(*a, g.zip_with(val(*b), "mul", |x, y| x * y)?);
                }
                if wants(*b) {
                    give(*b, g.zip_with(val(*a), "mul", |x, y| x * y)?);
                }
            }
            Op::Scale(a, s) => give(*a, g.map(|x| x * s)),
            Op::Relu(a) => give(
                *a,
                g.zip_with(val(*a), "relu", |x, y| if y > 0.0 { x } else { 0.0 })?,
            ),
            Op::LeakyRelu(a, slope) => give(
                *a,
                g.zip_with(val(*a), "leaky_relu", |x, y| if y > 0.0 { x } else { slope * x })?,
            ),
            Op::Tanh(a) => give(*a, g.zip_with(&node.value, "tanh", |x, y| x * (1.0 - y * y))?),
            Op::Exp(a) => give(*a, g.zip_with(&node.value, "exp", |x, y| x * y)?),
            Op::Transpose(a) => give(*a, g.transpose()),
            Op::SelectRows(a, idx) => {
                let src = val(*a);
                let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                {
                    let out = d.as_mut_slice();
                    for (k, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            out[r * cols + c] += g.get(k, c);
                        }
                    }
                }
                give(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = val(*p).shape();
                    if wants(*p) {
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        give(*p, DenseMatrix::from_raw(rows, cols, data));
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let cols = g.cols();
                for p in parts {
                    let rows = val(*p).rows();
                    if wants(*p) {
                        let data = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        give(*p, DenseMatrix::from_raw(rows, cols, data));
                    }
                    offset += rows;
                }
            }
            Op::SumAll(a) => {
                let (rows, cols) = val(*a).shape();
                give(*a, DenseMatrix::filled(rows, cols, g.as_slice()[0]));
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = node.value.as_slice();
                let gs = g.as_slice();
                let mut d = vec![0.0; y.len()];
                for seg in segments {
                    let dot: f64 = seg.iter().map(|&k| y[k] * gs[k]).sum();
                    for &k in seg {
                        d[k] = y[k] * (gs[k] - dot);
                    }
                }
                give(*a, DenseMatrix::from_raw(y.len(), 1, d));
            }
            Op::SegmentMax(a, argmax) => {
                let (rows, cols) = val(*a).shape();
                let mut d = vec![0.0; rows * cols];
                for (k, winner) in argmax.iter().enumerate() {
                    if let Some(flat) = winner {
                        d[*flat] += g.as_slice()[k];
                    }
                }
                give(*a, DenseMatrix::from_raw(rows, cols, d));
            }
            Op::LogSoftmaxRows(a) => {
                let (rows, cols) = node.value.shape();
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let gr = g.row(r);
                    let total: f64 = gr.iter().sum();
                    for (c, gv) in gr.iter().enumerate() {
                        d.push(gv - node.value.get(r, c).exp() * total);
                    }
                }
                give(*a, DenseMatrix::from_raw(rows, cols, d));
            }
        }
        Ok(())
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Relu(a)
        | Op::LeakyRelu(a, _)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Transpose(a)
        | Op::SelectRows(a, _)
        | Op::SumAll(a)
        | Op::SegmentSoftmax(a, _)
        | Op::SegmentMax(a, _)
        | Op::LogSoftmaxRows(a) => vec![*a],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
    }
}

/// Per-segment softmax of a column vector, outside any tape.
pub fn segment_softmax_values(logits: &DenseMatrix, segments: &[Vec<usize>]) -> Result<DenseMatrix> {
    if logits.cols() != 1 {
        return Err(Error::Dimension {
            op: "segment_softmax",
            lhs: logits.shape(),
            rhs: (logits.rows(), 1),
        });
    }
    let n = logits.rows();
    let mut seen = vec![false; n];
    let x = logits.as_slice();
    let mut out = vec![0.0; n];
    for seg in segments {
        if seg.is_empty() {
            return Err(Error::contract("segment_softmax: empty segment"));
        }
        for &k in seg {
            if k >= n {
                return Err(Error::Index {
                    what: "segment_softmax logits",
                    index: k,
                    len: n,
                });
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::contract(format!(
                    "segment_softmax: index {k} appears in more than one segment"
                )));
            }
        }
        let max = seg.iter().map(|&k| x[k]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = seg.iter().map(|&k| (x[k] - max).exp()).sum();
        for &k in seg {
            out[k] = (x[k] - max).exp() / z;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::contract(format!(
            "segment_softmax: index {k} belongs to no segment"
        )));
    }
    Ok(DenseMatrix::from_raw(n, 1, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let a = t.constant(m(&[vec![-1.0, 2.0]]));
        let r = t.elementwise(Elementwise::Relu, &[a]).unwrap();
        assert_eq!(t.value(r).as_slice(), &[0.0, 2.0]);

        let z = t.constant(DenseMatrix::zeros(2, 3));
        let th = t.elementwise(Elementwise::Tanh, &[z]).unwrap();
        assert_eq!(t.value(th), &DenseMatrix::zeros(2, 3));

        let mm = t.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let z2 = t.constant(DenseMatrix::zeros(2, 2));
        let s = t.elementwise(Elementwise::Add, &[mm, z2]).unwrap();
        assert_eq!(t.value(s), t.value(mm));

        assert!(t.elementwise(Elementwise::Add, &[mm, z]).is_err());
        assert!(t.elementwise(Elementwise::Mul, &[mm]).is_err());
    }

    #[test]
    fn segment_softmax_examples() {
        let uniform = segment_softmax_values(
            &DenseMatrix::column_vector(&[0.0, 0.0, 0.0]).unwrap(),
            &[vec![0, 1, 2]],
        )
        .unwrap();
        for v in uniform.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let two = segment_softmax_values(
            &DenseMatrix::column_vector(&[2f64.ln(), 0.0]).unwrap(),
            &[vec![0, 1]],
        )
        .unwrap();
        assert!((two.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((two.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);

        let singles = segment_softmax_values(
            &DenseMatrix::column_vector(&[5.0, -3.0]).unwrap(),
            &[vec![0], vec![1]],
        )
        .unwrap();
        assert_eq!(singles.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn segment_softmax_contract_errors() {
        let x = DenseMatrix::column_vector(&[0.0, 1.0]).unwrap();
        assert!(segment_softmax_values(&x, &[vec![0, 1], vec![]]).is_err());
        assert!(segment_softmax_values(&x, &[vec![0]]).is_err());
        assert!(segment_softmax_values(&x, &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let a = t.variable(m(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let s = t.sum(a).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(a), DenseMatrix::filled(2, 2, 1.0));
    }

    #[test]
    fn grad_of_sum_matmul() {
        let mut t = Tape::new();
        let a_val = m(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]);
        let b_val = m(&[vec![0.1, 0.2], vec![0.3, -0.4], vec![0.5, 0.6]]);
        let a = t.variable(a_val.clone());
        let b = t.variable(b_val.clone());
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c).unwrap();
        t.backward(s).unwrap();
        // d sum(AB)/dA = 1 * B^T, d/dB = A^T * 1
        let expected_a = DenseMatrix::filled(2, 2, 1.0).matmul(&b_val.transpose()).unwrap();
        let expected_b = a_val.transpose().matmul(&DenseMatrix::filled(2, 2, 1.0)).unwrap();
        assert!(t.grad(a).max_abs_diff(&expected_a).unwrap() < 1e-15);
        assert!(t.grad(b).max_abs_diff(&expected_b).unwrap() < 1e-15);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let a = t.variable(m(&[vec![1.0, 2.0]]));
        let sq = t.mul(a, a).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        let once = t.grad(a);
        t.backward(s).unwrap();
        let twice = t.grad(a);
        assert_eq!(twice.as_slice(), &[once.as_slice()[0] * 2.0, once.as_slice()[1] * 2.0]);
        t.zero_grads();
        t.backward(s).unwrap();
        assert_eq!(t.grad(a), once);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let a = t.variable(DenseMatrix::zeros(2, 1));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let mut t = Tape::new();
        let a = t.constant(DenseMatrix::filled(1, 1, 800.0));
        assert!(matches!(t.exp(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn segment_max_routes_gradient_to_winner() {
        let mut t = Tape::new();
        let a = t.variable(m(&[vec![1.0, 5.0], vec![3.0, 2.0], vec![-1.0, -1.0]]));
        let mx = t.segment_max(a, &[vec![0, 1], vec![], vec![2]]).unwrap();
        assert_eq!(t.value(mx).as_slice(), &[3.0, 5.0, 0.0, 0.0, -1.0, -1.0]);
        let s = t.sum(mx).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).as_slice(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
