//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied to [`Var`]s in execution
//! order, so the node list is already topologically sorted. [`Tape::backward`]
//! walks it once in reverse and sums contributions over fan-out.
//!
//! Tapes are cheap and meant to be rebuilt for each loss evaluation.

mod check;
pub mod conv;

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

pub use check::{finite_difference_gradient, relative_error};
pub use conv::ConvGeometry;

/// A linear operator usable as a tape primitive.
///
/// The backward rule applies the adjoint to the upstream gradient. Spectral
/// multipliers with real, symmetric tables are self-adjoint, which is the
/// default.
pub trait LinearMap: Send + Sync {
    fn apply(&self, input: &Tensor) -> Result<Tensor>;

    fn apply_adjoint(&self, upstream: &Tensor) -> Result<Tensor> {
        self.apply(upstream)
    }
}

/// One weighted gather: `y = Σ w_k · table[idx_k]`, with `dy/dx = Σ dx_k · table[idx_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpQuery {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dx: [f64; 4],
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    ScalarMul(usize, f64),
    ScalarAdd(usize),
    ScaleRows(usize, Arc<[f64]>),
    AddBias(usize, usize),
    MatMul(usize, usize),
    Elu(usize),
    EluDeriv(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Sign(usize),
    Abs(usize),
    Square(usize),
    Exp(usize),
    Sum(usize),
    ConcatCols(usize, usize),
    Reshape(usize),
    CenterRows(usize),
    Interp {
        table: usize,
        x: usize,
        queries: Arc<[InterpQuery]>,
    },
    Linear(usize, Arc<dyn LinearMap>),
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
        transposed: bool,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | MatMul(a, b) | ConcatCols(a, b) => {
                vec![*a, *b]
            }
            Neg(a) | ScalarMul(a, _) | ScalarAdd(a) | ScaleRows(a, _) | Elu(a) | EluDeriv(a)
            | Tanh(a) | LeakyRelu(a, _) | Sign(a) | Abs(a) | Square(a) | Exp(a) | Sum(a)
            | Reshape(a) | CenterRows(a) | Linear(a, _) => vec![*a],
            Interp { table, x, .. } => vec![*table, *x],
            Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var<'_>) -> Option<&Tensor> {
        self.by_leaf.get(&leaf.id)
    }

    pub fn wrt(&self, leaf: Var<'_>) -> Result<&Tensor> {
        self.get(leaf).ok_or(Error::NotOnTape { id: leaf.id })
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_leaf.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn value_ref(&self, v: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape) && v.id < self.len()
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, op: Op, value: Tensor) -> Var<'_> {
        let rg = self.needs_grad(&op.inputs());
        self.push(value, op, rg)
    }

    fn unary(&self, a: Var<'_>, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let value = self.nodes.borrow()[a.id].value.map(f);
        self.record(op, value)
    }

    /// Reverse pass from a scalar output. Returns a gradient for every leaf;
    /// leaves the output does not depend on get zeros.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !self.owns(output) {
            return Err(Error::NotOnTape { id: output.id });
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if !out.value.is_scalar() {
            return Err(Error::NonScalarOutput {
                shape: out.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.id).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(out.value.shape(), 1.0));

        for i in (0..=output.id).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, node, g, &mut grads)?;
        }

        let mut by_leaf = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                by_leaf.insert(i, g);
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *b, g.clone());
            accumulate(nodes, grads, *a, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *b, g.map(|v| -v));
            accumulate(nodes, grads, *a, g);
        }
        Op::Mul(a, b) => {
            let ga = g.zip_map(val(*b), |u, y| u * y)?;
            let gb = g.zip_map(val(*a), |u, x| u * x)?;
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Neg(a) => accumulate(nodes, grads, *a, g.map(|v| -v)),
        Op::ScalarMul(a, c) => accumulate(nodes, grads, *a, g.scale(*c)),
        Op::ScalarAdd(a) => accumulate(nodes, grads, *a, g),
        Op::ScaleRows(a, scales) => {
            let mut ga = g;
            for (r, s) in scales.iter().enumerate() {
                ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::AddBias(a, b) => {
            let n = val(*b).len();
            let mut gb = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(nodes, grads, *b, Tensor::new(val(*b).shape(), gb)?);
            accumulate(nodes, grads, *a, g);
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                kernels::matmul_bt_acc(g.data(), bv.data(), &mut ga, m, k, n);
                accumulate(nodes, grads, *a, Tensor::new(&[m, k], ga)?);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                kernels::matmul_at_acc(av.data(), g.data(), &mut gb, m, k, n);
                accumulate(nodes, grads, *b, Tensor::new(&[k, n], gb)?);
            }
        }
        Op::Elu(a) => {
            let ga = g.zip_map(&node.value, |u, y| if y > 0.0 { u } else { u * (y + 1.0) })?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::EluDeriv(a) => {
            let ga = g.zip_map(val(*a), |u, x| if x > 0.0 { 0.0 } else { u * x.exp() })?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::Tanh(a) => {
            let ga = g.zip_map(&node.value, |u, y| u * (1.0 - y * y))?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            let ga = g.zip_map(val(*a), |u, x| if x > 0.0 { u } else { u * s })?;
            accumulate(nodes, grads, *a, ga);
        }
        // Subgradient convention: sign has zero derivative everywhere.
        Op::Sign(_) => {}
        Op::Abs(a) => {
            let ga = g.zip_map(val(*a), |u, x| u * sign(x))?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::Square(a) => {
            let ga = g.zip_map(val(*a), |u, x| 2.0 * u * x)?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::Exp(a) => {
            let ga = g.zip_map(&node.value, |u, y| u * y)?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::Sum(a) => {
            let u = g.data()[0];
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), u));
        }
        Op::ConcatCols(a, b) => {
            let (na, nb) = (val(*a).row_len(), val(*b).row_len());
            let rows = val(*a).rows();
            let mut ga = Vec::with_capacity(rows * na);
            let mut gb = Vec::with_capacity(rows * nb);
            for row in g.data().chunks(na + nb) {
                ga.extend_from_slice(&row[..na]);
                gb.extend_from_slice(&row[na..]);
            }
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), ga)?);
            accumulate(nodes, grads, *b, Tensor::new(val(*b).shape(), gb)?);
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, g.into_shape(val(*a).shape())?);
        }
        Op::CenterRows(a) => {
            accumulate(nodes, grads, *a, center_rows(&g));
        }
        Op::Interp { table, x, queries } => {
            let tv = val(*table);
            if nodes[*table].requires_grad {
                let mut gt = vec![0.0; tv.len()];
                for (q, u) in queries.iter().zip(g.data()) {
                    for k in 0..4 {
                        if q.w[k] != 0.0 {
                            gt[q.idx[k]] += q.w[k] * u;
                        }
                    }
                }
                accumulate(nodes, grads, *table, Tensor::new(tv.shape(), gt)?);
            }
            if nodes[*x].requires_grad {
                let t = tv.data();
                let gx: Vec<f64> = queries
                    .iter()
                    .zip(g.data())
                    .map(|(q, u)| u * (0..4).map(|k| q.dx[k] * t[q.idx[k]]).sum::<f64>())
                    .collect();
                accumulate(nodes, grads, *x, Tensor::new(val(*x).shape(), gx)?);
            }
        }
        Op::Linear(a, map) => {
            accumulate(nodes, grads, *a, map.apply_adjoint(&g)?);
        }
        Op::Conv {
            x,
            w,
            b,
            geom,
            transposed,
        } => {
            let (xv, wv) = (val(*x), val(*w));
            if nodes[*x].requires_grad {
                let gx = if *transposed {
                    geom.forward(g.data(), wv.data())
                } else {
                    geom.adjoint(g.data(), wv.data())
                };
                accumulate(nodes, grads, *x, Tensor::new(xv.shape(), gx)?);
            }
            if nodes[*w].requires_grad {
                let gw = if *transposed {
                    geom.weight_grad(xv.data(), g.data())
                } else {
                    geom.weight_grad(g.data(), xv.data())
                };
                accumulate(nodes, grads, *w, Tensor::new(wv.shape(), gw)?);
            }
            if let Some(b) = b {
                let gb = geom.bias_grad(g.data(), val(*b).len());
                accumulate(nodes, grads, *b, Tensor::new(val(*b).shape(), gb)?);
            }
        }
    }
    Ok(())
}

/// `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn center_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let w = out.row_len();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / w as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(*self).shape().to_vec()
    }

    fn check_tape(&self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::NotOnTape { id: other.id })
        }
    }

    fn elementwise(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.check_tape(other)?;
        let value = {
            let a = self.tape.value_ref(self);
            let b = self.tape.value_ref(other);
            a.zip_map(&b, f)?
        };
        Ok(self.tape.record(op, value))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self, Op::Neg(self.id), |v| -v)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::ScalarMul(self.id, c), |v| v * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::ScalarAdd(self.id), |v| v + c)
    }

    /// Multiplies row `r` of the leading axis by `scales[r]`.
    pub fn scale_rows(self, scales: &[f64]) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_ref(self);
            if a.rows() != scales.len() {
                return Err(Error::ShapeMismatch {
                    op: "scale_rows",
                    lhs: a.shape().to_vec(),
                    rhs: vec![scales.len()],
                });
            }
            let mut out = a.clone();
            for (r, s) in scales.iter().enumerate() {
                out.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            out
        };
        Ok(self
            .tape
            .record(Op::ScaleRows(self.id, Arc::from(scales)), value))
    }

    /// `[B, n] + [n]`, broadcasting the bias over rows.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(bias)?;
        let value = {
            let a = self.tape.value_ref(self);
            let b = self.tape.value_ref(bias);
            if a.ndim() != 2 || b.len() != a.shape()[1] {
                return Err(Error::ShapeMismatch {
                    op: "add_bias",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(b.len()) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.tape.record(Op::AddBias(self.id, bias.id), value))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(other)?;
        let value = {
            let a = self.tape.value_ref(self);
            let b = self.tape.value_ref(other);
            if a.ndim() != 2 || b.ndim() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            a.matmul(&b)?
        };
        Ok(self.tape.record(Op::MatMul(self.id, other.id), value))
    }

    pub fn elu(self) -> Var<'t> {
        self.tape.unary(self, Op::Elu(self.id), elu)
    }

    /// Derivative of [`Var::elu`]; differentiable itself, which lets
    /// input-Jacobian terms enter a loss without higher-order tapes.
    pub fn elu_deriv(self) -> Var<'t> {
        self.tape
            .unary(self, Op::EluDeriv(self.id), |x| if x > 0.0 { 1.0 } else { x.exp() })
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self, Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.tape.unary(self, Op::LeakyRelu(self.id, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn sign(self) -> Var<'t> {
        self.tape.unary(self, Op::Sign(self.id), sign)
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(self, Op::Abs(self.id), f64::abs)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self, Op::Square(self.id), |x| x * x)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self, Op::Exp(self.id), f64::exp)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.tape.value_ref(self).sum();
        self.tape.record(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.tape.value_ref(self).len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Concatenates `[B, n]` and `[B, m]` into `[B, n + m]` (rows of any
    /// trailing shape are flattened).
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(other)?;
        let value = {
            let a = self.tape.value_ref(self);
            let b = self.tape.value_ref(other);
            if a.rows() != b.rows() {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (na, nb) = (a.row_len(), b.row_len());
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::new(&[a.rows(), na + nb], data)?
        };
        Ok(self.tape.record(Op::ConcatCols(self.id, other.id), value))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self).reshape(shape)?;
        Ok(self.tape.record(Op::Reshape(self.id), value))
    }

    /// Subtracts each row's mean (projection onto zero-mean rows).
    pub fn center_rows(self) -> Var<'t> {
        let value = center_rows(&self.tape.value_ref(self));
        self.tape.record(Op::CenterRows(self.id), value)
    }

    /// Weighted gather from `self` (the table) at positions described by
    /// `queries`, one output per query, shaped `[queries.len(), 1]`.
    /// `x` carries the query coordinates; its gradient is `Σ dx_k · table[idx_k]`.
    pub fn interp(self, x: Var<'t>, queries: Vec<InterpQuery>) -> Result<Var<'t>> {
        self.check_tape(x)?;
        let value = {
            let t = self.tape.value_ref(self);
            let xv = self.tape.value_ref(x);
            if xv.len() != queries.len() {
                return Err(Error::ShapeMismatch {
                    op: "interp",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![queries.len()],
                });
            }
            if let Some(bad) = queries.iter().flat_map(|q| q.idx).find(|&i| i >= t.len()) {
                return Err(Error::invalid(format!(
                    "interp index {bad} out of range for table of {} cells",
                    t.len()
                )));
            }
            let td = t.data();
            let data: Vec<f64> = queries
                .iter()
                .map(|q| (0..4).map(|k| q.w[k] * td[q.idx[k]]).sum())
                .collect();
            Tensor::new(xv.shape(), data)?
        };
        Ok(self.tape.record(
            Op::Interp {
                table: self.id,
                x: x.id,
                queries: queries.into(),
            },
            value,
        ))
    }

    /// Applies a linear operator (e.g. a spectral multiplier).
    pub fn linear(self, map: Arc<dyn LinearMap>) -> Result<Var<'t>> {
        let value = map.apply(&self.tape.value_ref(self))?;
        Ok(self.tape.record(Op::Linear(self.id, map), value))
    }

    /// Periodic 2D convolution; `self` is `[B, C_in, H, W]` (any shape with
    /// that many elements), weight `[C_out, C_in, K, K]`, optional bias `[C_out]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Result<Var<'t>> {
        self.conv_impl(weight, bias, geom, false)
    }

    /// Adjoint of [`Var::conv2d`]: `self` is `[B, C_out, H, W]`, weight is
    /// laid out `[C_out, C_in, K, K]` exactly as for the forward convolution,
    /// and the result is `[B, C_in, H, W]`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        geom: ConvGeometry,
    ) -> Result<Var<'t>> {
        self.conv_impl(weight, bias, geom, true)
    }

    fn conv_impl(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        geom: ConvGeometry,
        transposed: bool,
    ) -> Result<Var<'t>> {
        self.check_tape(weight)?;
        if let Some(b) = bias {
            self.check_tape(b)?;
        }
        let value = {
            let x = self.tape.value_ref(self);
            let w = self.tape.value_ref(weight);
            let (cin, cout) = if transposed {
                (geom.c_out, geom.c_in)
            } else {
                (geom.c_in, geom.c_out)
            };
            if x.len() != geom.batch * cin * geom.h * geom.w || w.len() != geom.weight_len() {
                return Err(Error::ShapeMismatch {
                    op: if transposed { "conv_transpose2d" } else { "conv2d" },
                    lhs: x.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                });
            }
            let mut out = if transposed {
                geom.adjoint(x.data(), w.data())
            } else {
                geom.forward(x.data(), w.data())
            };
            if let Some(b) = bias {
                let bv = self.tape.value_ref(b);
                if bv.len() != cout {
                    return Err(Error::ShapeMismatch {
                        op: "conv bias",
                        lhs: vec![cout],
                        rhs: bv.shape().to_vec(),
                    });
                }
                geom.add_bias(&mut out, bv.data(), cout);
            }
            Tensor::new(&[geom.batch, cout, geom.h, geom.w], out)?
        };
        Ok(self.tape.record(
            Op::Conv {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                geom,
                transposed,
            },
            value,
        ))
    }
}

#[cfg(test)]
mod tests;
