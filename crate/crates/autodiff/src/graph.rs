//! Computation graph arena and the differentiable primitives.
//!
//! A [`Graph`] is an append-only arena: every primitive pushes one node whose
//! parents already exist, so node ids are a topological order. Backward walks
//! ids in descending order, which fixes the gradient summation order.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

/// The primitive that produced a node, with parent node ids.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    /// `scale * x + shift`
    ScaleShift(usize, f64, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Recip(usize),
    Abs(usize),
    Minimum(usize, usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    Fill(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "variable",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::ScaleShift(..) => "scale_shift",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::Recip(..) => "recip",
            Op::Abs(..) => "abs",
            Op::Minimum(..) => "minimum",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Fill(..) => "fill",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
        }
    }

    pub(crate) fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b)
            | Op::Minimum(a, b) => vec![*a, *b],
            Op::ScaleShift(a, ..)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Recip(a)
            | Op::Abs(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Fill(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

pub(crate) struct NodeData {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) name: Option<Rc<str>>,
}

/// Append-only computation graph. Confined to one thread.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: RefCell<Vec<NodeData>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        write!(f, "Var#{}({}, {:?})", self.id, node.op.name(), node.value)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    pub(crate) fn push_rc(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(NodeData {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn named_variable(&self, value: Tensor, name: &str) -> Var<'_> {
        let v = self.variable(value);
        self.nodes.borrow_mut()[v.id].name = Some(Rc::from(name));
        v
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn constant_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Constant, false)
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        for p in parts {
            self.check(*p)?;
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_cols(&refs)?;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
    }

    /// True when `output` is computed from `target` through differentiable edges.
    pub fn depends_on(&self, output: Var<'_>, target: Var<'_>) -> bool {
        if target.id > output.id {
            return false;
        }
        let nodes = self.nodes.borrow();
        let mut reach = vec![false; output.id + 1];
        reach[target.id] = true;
        for id in target.id + 1..=output.id {
            reach[id] = nodes[id].op.parents().iter().any(|&p| reach[p]);
        }
        reach[output.id]
    }

    fn check(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.graph) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignNode)
        }
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    /// The numeric value of a single-element node.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.graph.nodes.borrow()[self.id].op.name()
    }

    pub fn name(&self) -> Option<String> {
        self.graph.nodes.borrow()[self.id]
            .name
            .as_ref()
            .map(|n| n.to_string())
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Stop-gradient: same value, no path back to the inputs.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant_rc(self.value())
    }

    fn unary(self, op: Op, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Var<'g>> {
        let out = f(&self.value())?;
        Ok(self.graph.push(out, op, self.requires_grad()))
    }

    fn unary_map(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let out = self.value().map(f);
        self.graph.push(out, op, self.requires_grad())
    }

    fn binary(
        self,
        rhs: Var<'g>,
        op: Op,
        f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'g>> {
        self.graph.check(rhs)?;
        let out = f(&self.value(), &rhs.value())?;
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.graph.push(out, op, rg))
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Add(self.id, rhs.id), Tensor::add)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), Tensor::sub)
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), Tensor::mul)
    }

    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.mul(rhs.recip())
    }

    /// `(n, d) + (d)` with the vector repeated over the batch dimension.
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>> {
        self.binary(row, Op::AddRow(self.id, row.id), Tensor::add_row)
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::MatMul(self.id, rhs.id), Tensor::matmul)
    }

    pub fn minimum(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Minimum(self.id, rhs.id), |a, b| {
            a.zip_map(b, "minimum", f64::min)
        })
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn scale_shift(self, scale: f64, shift: f64) -> Var<'g> {
        self.unary_map(Op::ScaleShift(self.id, scale, shift), |v| {
            scale * v + shift
        })
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        self.scale_shift(factor, 0.0)
    }

    pub fn shift(self, shift: f64) -> Var<'g> {
        self.scale_shift(1.0, shift)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary_map(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary_map(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary_map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Var<'g> {
        self.unary_map(Op::Softplus(self.id), softplus)
    }

    pub fn log(self) -> Var<'g> {
        self.unary_map(Op::Log(self.id), f64::ln)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary_map(Op::Exp(self.id), f64::exp)
    }

    pub fn square(self) -> Var<'g> {
        self.unary_map(Op::Square(self.id), |v| v * v)
    }

    pub fn recip(self) -> Var<'g> {
        self.unary_map(Op::Recip(self.id), f64::recip)
    }

    pub fn abs(self) -> Var<'g> {
        self.unary_map(Op::Abs(self.id), f64::abs)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary_map(Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Sum of all elements, rank-0 result.
    pub fn sum(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph
            .push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    /// Mean of all elements, rank-0 result.
    pub fn mean(self) -> Var<'g> {
        let m = self.value().mean();
        self.graph
            .push(Tensor::scalar(m), Op::Mean(self.id), self.requires_grad())
    }

    /// Repeats a rank-0 value over `shape`.
    pub fn fill(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        if v.rank() != 0 {
            return Err(AutodiffError::Rank {
                op: "fill",
                shape: v.shape().to_vec(),
            });
        }
        Ok(self.graph.push(
            Tensor::full(shape, v.data()[0]),
            Op::Fill(self.id),
            self.requires_grad(),
        ))
    }

    pub fn sum_rows(self) -> Result<Var<'g>> {
        self.unary(Op::SumRows(self.id), Tensor::sum_rows)
    }

    pub fn broadcast_rows(self, n: usize) -> Result<Var<'g>> {
        self.unary(Op::BroadcastRows(self.id), |t| t.broadcast_rows(n))
    }

    pub fn sum_cols(self) -> Result<Var<'g>> {
        self.unary(Op::SumCols(self.id), Tensor::sum_cols)
    }

    pub fn broadcast_cols(self, d: usize) -> Result<Var<'g>> {
        self.unary(Op::BroadcastCols(self.id), |t| t.broadcast_cols(d))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'g>> {
        self.unary(Op::SliceCols(self.id, start), |t| t.slice_cols(start, len))
    }

    /// Dense layer `x W + b` with `x: (n, in)`, `W: (in, out)`, `b: (out)`.
    pub fn affine(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        self.matmul(weight)?.add_row(bias)
    }

    /// Elementwise log N(x; mean, exp(log_std)^2).
    pub fn gaussian_log_density(self, mean: Var<'g>, log_std: Var<'g>) -> Result<Var<'g>> {
        let z = self.sub(mean)?.mul(log_std.neg().exp())?;
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        z.square()
            .scale(-0.5)
            .sub(log_std)
            .map(|v| v.shift(-half_ln_2pi))
    }

    /// Reparameterized sample `mean + exp(log_std) * noise`. The noise is an
    /// input, so the sample is a deterministic function of its arguments.
    pub fn gaussian_sample(mean: Var<'g>, log_std: Var<'g>, noise: &Tensor) -> Result<Var<'g>> {
        let eps = mean.graph.constant(noise.clone());
        mean.add(log_std.exp().mul(eps)?)
    }
}
