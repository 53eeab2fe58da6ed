//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation is appended to the tape together with its output value.
//! `backward` walks the tape in exact reverse order and accumulates adjoints
//! additively, so a value consumed by several operations receives the sum of
//! all incoming adjoints. Leaves created with `constant` (or from a tensor
//! without `requires_grad`) never receive gradients.

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise functions with registered adjoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Tanh,
    Sigmoid,
    Exp,
    Log1p,
    Neg,
    Scale(f64),
    Shift(f64),
    Relu,
    Softplus,
    Abs,
    Square,
    Sqrt,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Tanh => "tanh",
            Elementwise::Sigmoid => "sigmoid",
            Elementwise::Exp => "exp",
            Elementwise::Log1p => "log1p",
            Elementwise::Neg => "neg",
            Elementwise::Scale(_) => "scale",
            Elementwise::Shift(_) => "shift",
            Elementwise::Relu => "relu",
            Elementwise::Softplus => "softplus",
            Elementwise::Abs => "abs",
            Elementwise::Square => "square",
            Elementwise::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Elementwise::Tanh => x.tanh(),
            Elementwise::Sigmoid => sigmoid(x),
            Elementwise::Exp => x.exp(),
            Elementwise::Log1p => x.ln_1p(),
            Elementwise::Neg => -x,
            Elementwise::Scale(c) => c * x,
            Elementwise::Shift(c) => x + c,
            Elementwise::Relu => x.max(0.0),
            Elementwise::Softplus => softplus(x),
            Elementwise::Abs => x.abs(),
            Elementwise::Square => x * x,
            Elementwise::Sqrt => x.sqrt(),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Elementwise::Tanh => 1.0 - y * y,
            Elementwise::Sigmoid => y * (1.0 - y),
            Elementwise::Exp => y,
            Elementwise::Log1p => 1.0 / (1.0 + x),
            Elementwise::Neg => -1.0,
            Elementwise::Scale(c) => c,
            Elementwise::Shift(_) => 1.0,
            Elementwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Elementwise::Softplus => sigmoid(x),
            Elementwise::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Elementwise::Square => 2.0 * x,
            Elementwise::Sqrt => 0.5 / y,
        }
    }

    fn check_domain(self, data: &[f64]) -> Result<()> {
        let bad = match self {
            Elementwise::Log1p => data.iter().position(|&x| x <= -1.0),
            Elementwise::Sqrt => data.iter().position(|&x| x <= 0.0),
            _ => None,
        };
        match bad {
            Some(index) => Err(Error::Numeric {
                op: self.name(),
                index,
                detail: format!("argument {} outside domain", data[index]),
            }),
            None => Ok(()),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Unary(Var, Elementwise),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, eps: f64 },
    Reduce { x: Var, axis: usize, kind: ReduceKind },
    SumAll(Var),
    Reshape(Var),
    Repeat { x: Var, times: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Stack(Vec<Var>),
    Slice { x: Var, axis: usize, start: usize, len: usize },
    IndexSelect { x: Var, axis: usize, indices: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Maximum(a, b)
            | Op::Minimum(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Unary(x, _)
            | Op::SumAll(x)
            | Op::Reshape(x)
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Reduce { x, .. }
            | Op::Repeat { x, .. }
            | Op::Slice { x, .. }
            | Op::IndexSelect { x, .. } => vec![*x],
            Op::Concat { parts, .. } | Op::Stack(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Output shape requested by a reshape; kept so replay can rebuild it.
    shape_hint: Option<Vec<usize>>,
}

/// Per-leaf gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Subset of the tape that depends on one leaf; see [`Graph::replay`].
#[derive(Clone, Debug)]
pub struct ReplayPlan {
    leaf: Var,
    root: Var,
    nodes: Vec<usize>,
    slot: Vec<usize>,
}

impl ReplayPlan {
    /// Whether perturbing the leaf can change the root at all.
    pub fn reaches_root(&self) -> bool {
        self.slot[self.root.0] != usize::MAX || self.root == self.leaf
    }
}

/// A single-threaded operation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::shape(op, t.shape(), &[axis]));
    }
    Ok(())
}

fn finite(op: &'static str, t: &Tensor) -> Result<()> {
    match t.data().iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::Numeric {
            op,
            index,
            detail: format!("non-finite value {}", t.data()[index]),
        }),
        None => Ok(()),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_raw(x: &Tensor, axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * n + i) * inner + j;
            let max = (0..n).map(|i| d[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..n {
                let e = (d[idx(i)] - max).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..n {
                out[idx(i)] /= sum;
            }
        }
    }
    out
}

fn log_softmax_raw(x: &Tensor, axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * n + i) * inner + j;
            let max = (0..n).map(|i| d[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..n).map(|i| (d[idx(i)] - max).exp()).sum::<f64>().ln();
            for i in 0..n {
                out[idx(i)] = d[idx(i)] - lse;
            }
        }
    }
    out
}

/// Mean shifted by the first element, so a constant slice has a mean equal
/// to its value and normalizes to exact zeros.
fn slice_mean(d: &[f64], n: usize, idx: impl Fn(usize) -> usize) -> f64 {
    let x0 = d[idx(0)];
    x0 + (0..n).map(|i| d[idx(i)] - x0).sum::<f64>() / n as f64
}

fn layer_norm_raw(x: &Tensor, axis: usize, eps: f64) -> Vec<f64> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * n + i) * inner + j;
            let mean = slice_mean(d, n, idx);
            let var = (0..n).map(|i| (d[idx(i)] - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..n {
                out[idx(i)] = (d[idx(i)] - mean) * inv;
            }
        }
    }
    out
}

fn reduce_raw(x: &Tensor, axis: usize, kind: ReduceKind) -> (Vec<usize>, Vec<f64>) {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..n {
            for j in 0..inner {
                out[o * inner + j] += d[(o * n + i) * inner + j];
            }
        }
    }
    if kind == ReduceKind::Mean {
        for v in &mut out {
            *v /= n as f64;
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    (shape, out)
}

fn eval_op<'a>(op: &Op, shape_hint: Option<&[usize]>, get: &dyn Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    let out = match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            Tensor::new(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        }
        Op::Transpose(x) => {
            let x = get(*x);
            if x.rank() != 2 {
                return Err(Error::shape("transpose", x.shape(), &[]));
            }
            let (m, n) = (x.rows(), x.cols());
            Tensor::new(&[n, m], transpose_raw(x.data(), m, n))?
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let name = match op {
                Op::Add(..) => "add",
                Op::Sub(..) => "sub",
                Op::Mul(..) => "mul",
                Op::Div(..) => "div",
                Op::Maximum(..) => "maximum",
                _ => "minimum",
            };
            same_shape(name, a, b)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                Op::Mul(..) => |x, y| x * y,
                Op::Div(..) => |x, y| x / y,
                Op::Maximum(..) => |x, y| if x >= y { x } else { y },
                _ => |x, y| if x <= y { x } else { y },
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        }
        Op::Unary(x, f) => {
            let x = get(*x);
            f.check_domain(x.data())?;
            Tensor::new(x.shape(), x.data().iter().map(|&v| f.apply(v)).collect())?
        }
        Op::Softmax { x, axis } => {
            let x = get(*x);
            check_axis("softmax", x, *axis)?;
            Tensor::new(x.shape(), softmax_raw(x, *axis))?
        }
        Op::LogSoftmax { x, axis } => {
            let x = get(*x);
            check_axis("log_softmax", x, *axis)?;
            Tensor::new(x.shape(), log_softmax_raw(x, *axis))?
        }
        Op::LayerNorm { x, axis, eps } => {
            let x = get(*x);
            check_axis("layer_norm", x, *axis)?;
            if x.shape()[*axis] < 2 {
                return Err(Error::shape("layer_norm", x.shape(), &[*axis]));
            }
            Tensor::new(x.shape(), layer_norm_raw(x, *axis, *eps))?
        }
        Op::Reduce { x, axis, kind } => {
            let x = get(*x);
            check_axis("reduce", x, *axis)?;
            let (shape, data) = reduce_raw(x, *axis, *kind);
            Tensor::new(&shape, data)?
        }
        Op::SumAll(x) => Tensor::scalar(get(*x).data().iter().sum()),
        Op::Reshape(x) => {
            let x = get(*x);
            let shape = shape_hint.expect("reshape keeps its target shape");
            Tensor::new(shape, x.data().to_vec())?
        }
        Op::Repeat { x, times } => {
            let x = get(*x);
            if x.rank() != 1 {
                return Err(Error::shape("repeat", x.shape(), &[*times]));
            }
            let mut data = Vec::with_capacity(x.numel() * times);
            for _ in 0..*times {
                data.extend_from_slice(x.data());
            }
            Tensor::new(&[*times, x.numel()], data)?
        }
        Op::Concat { parts, axis } => {
            let first = get(parts[0]);
            check_axis("concat", first, *axis)?;
            let mut shape = first.shape().to_vec();
            let mut total = 0;
            for p in parts {
                let t = get(*p);
                let ok = t.rank() == first.rank()
                    && t.shape().iter().enumerate().all(|(k, &e)| k == *axis || e == first.shape()[k]);
                if !ok {
                    return Err(Error::shape("concat", first.shape(), t.shape()));
                }
                total += t.shape()[*axis];
            }
            shape[*axis] = total;
            let (outer, _, inner) = axis_split(&shape, *axis);
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let t = get(*p);
                    let chunk = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(&shape, data)?
        }
        Op::Stack(parts) => {
            let first = get(parts[0]);
            let mut data = Vec::with_capacity(first.numel() * parts.len());
            for p in parts {
                let t = get(*p);
                same_shape("stack", first, t)?;
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![parts.len()];
            shape.extend_from_slice(first.shape());
            Tensor::new(&shape, data)?
        }
        Op::Slice { x, axis, start, len } => {
            let x = get(*x);
            check_axis("slice", x, *axis)?;
            let (outer, n, inner) = axis_split(x.shape(), *axis);
            if *len == 0 || start + len > n {
                return Err(Error::shape("slice", x.shape(), &[*start, *len]));
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = *len;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            Tensor::new(&shape, data)?
        }
        Op::IndexSelect { x, axis, indices } => {
            let x = get(*x);
            check_axis("index_select", x, *axis)?;
            let (outer, n, inner) = axis_split(x.shape(), *axis);
            if indices.is_empty() || indices.iter().any(|&i| i >= n) {
                return Err(Error::shape("index_select", x.shape(), indices));
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = indices.len();
            let mut data = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &i in indices {
                    let base = (o * n + i) * inner;
                    data.extend_from_slice(&x.data()[base..base + inner]);
                }
            }
            Tensor::new(&shape, data)?
        }
    };
    finite(op_name(op), &out)?;
    Ok(out)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Maximum(..) => "maximum",
        Op::Minimum(..) => "minimum",
        Op::Unary(_, f) => f.name(),
        Op::Softmax { .. } => "softmax",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Reduce { .. } => "reduce",
        Op::SumAll(..) => "sum_all",
        Op::Reshape(..) => "reshape",
        Op::Repeat { .. } => "repeat",
        Op::Concat { .. } => "concat",
        Op::Stack(..) => "stack",
        Op::Slice { .. } => "slice",
        Op::IndexSelect { .. } => "index_select",
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape_hint: Option<Vec<usize>>) -> Result<Var> {
        let value = {
            let nodes = &self.nodes;
            eval_op(&op, shape_hint.as_deref(), &|v: Var| &nodes[v.0].value)?
        };
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            shape_hint,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; it is trainable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            shape_hint: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose(x), None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b), None)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b), None)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b), None)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Maximum(a, b), None)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Minimum(a, b), None)
    }

    pub fn elementwise(&mut self, x: Var, f: Elementwise) -> Result<Var> {
        self.push(Op::Unary(x, f), None)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.elementwise(x, Elementwise::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.elementwise(x, Elementwise::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.elementwise(x, Elementwise::Exp)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.elementwise(x, Elementwise::Relu)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.elementwise(x, Elementwise::Scale(c))
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        self.elementwise(x, Elementwise::Shift(c))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.push(Op::Softmax { x, axis }, None)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.push(Op::LogSoftmax { x, axis }, None)
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance.
    /// No affine parameters.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Usage(format!("layer_norm eps must be positive, got {eps}")));
        }
        self.push(Op::LayerNorm { x, axis, eps }, None)
    }

    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        self.push(Op::Reduce { x, axis, kind }, None)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumAll(x), None)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let target = self.value(x).reshaped(shape)?;
        self.push(Op::Reshape(x), Some(target.shape().to_vec()))
    }

    /// Duplicates a vector `times` times into the rows of a matrix.
    pub fn repeat(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Usage("repeat count must be positive".into()));
        }
        self.push(Op::Repeat { x, times }, None)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            None,
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("stack of zero tensors".into()));
        }
        self.push(Op::Stack(parts.to_vec()), None)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice { x, axis, start, len }, None)
    }

    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.push(
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
            None,
        )
    }

    /// Computes d(loss)/d(leaf) for every trainable leaf.
    ///
    /// Leaves whose value never reaches `loss` get a zero gradient. The tape
    /// may only be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Graph("backward on an empty graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            for (input, delta) in self.input_adjoints(idx, &g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut adj[input.0], delta);
                }
            }
        }

        let mut grads = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = adj
                    .get_mut(idx)
                    .and_then(|a| a.take())
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.set_grad(g.clone());
                grads[idx] = Some(Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(Gradients { grads })
    }

    fn input_adjoints(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let bt = transpose_raw(bv.data(), k, n);
                let at = transpose_raw(av.data(), m, k);
                vec![
                    (*a, matmul_raw(g, &bt, m, n, k)),
                    (*b, matmul_raw(&at, g, k, m, n)),
                ]
            }
            Op::Transpose(x) => {
                let (m, n) = (y.rows(), y.cols());
                vec![(*x, transpose_raw(g, m, n))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g / b).collect()),
                    (
                        *b,
                        g.iter()
                            .zip(av.iter().zip(bv))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect(),
                    ),
                ]
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let is_max = matches!(node.op, Op::Maximum(..));
                let (av, bv) = (val(a).data(), val(b).data());
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let pick_a = if is_max { av[i] >= bv[i] } else { av[i] <= bv[i] };
                    if pick_a {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Unary(x, f) => {
                let xv = val(x).data();
                let d = g
                    .iter()
                    .zip(xv.iter().zip(y.data()))
                    .map(|(g, (&x, &y))| g * f.derivative(x, y))
                    .collect();
                vec![(*x, d)]
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * n + i) * inner + j;
                        let dot: f64 = (0..n).map(|i| g[idx(i)] * yd[idx(i)]).sum();
                        for i in 0..n {
                            d[idx(i)] = yd[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * n + i) * inner + j;
                        let gsum: f64 = (0..n).map(|i| g[idx(i)]).sum();
                        for i in 0..n {
                            d[idx(i)] = g[idx(i)] - yd[idx(i)].exp() * gsum;
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::LayerNorm { x, axis, eps } => {
                let xd = val(x).data();
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut d = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * n + i) * inner + j;
                        let mean = slice_mean(xd, n, idx);
                        let var = (0..n).map(|i| (xd[idx(i)] - mean).powi(2)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean = (0..n).map(|i| g[idx(i)]).sum::<f64>() / n as f64;
                        let gy = (0..n).map(|i| g[idx(i)] * yd[idx(i)]).sum::<f64>() / n as f64;
                        for i in 0..n {
                            d[idx(i)] = inv * (g[idx(i)] - gmean - yd[idx(i)] * gy);
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::Reduce { x, axis, kind } => {
                let xs = val(x).shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let s = if *kind == ReduceKind::Mean { 1.0 / n as f64 } else { 1.0 };
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..n {
                        for j in 0..inner {
                            d[(o * n + i) * inner + j] = g[o * inner + j] * s;
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::SumAll(x) => vec![(*x, vec![g[0]; val(x).numel()])],
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Repeat { x, times } => {
                let n = val(x).numel();
                let mut d = vec![0.0; n];
                for r in 0..*times {
                    for (dv, gv) in d.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                        *dv += gv;
                    }
                }
                vec![(*x, d)]
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(y.shape(), *axis);
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let len = val(p).shape()[*axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g[base..base + len * inner]);
                    }
                    offset += len;
                    out.push((*p, d));
                }
                out
            }
            Op::Stack(parts) => {
                let n = val(&parts[0]).numel();
                parts
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (*p, g[k * n..(k + 1) * n].to_vec()))
                    .collect()
            }
            Op::Slice { x, axis, start, len } => {
                let (outer, n, inner) = axis_split(val(x).shape(), *axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, d)]
            }
            Op::IndexSelect { x, axis, indices } => {
                let (outer, n, inner) = axis_split(val(x).shape(), *axis);
                let k = indices.len();
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for (pos, &i) in indices.iter().enumerate() {
                        let src = (o * k + pos) * inner;
                        let dst = (o * n + i) * inner;
                        for t in 0..inner {
                            d[dst + t] += g[src + t];
                        }
                    }
                }
                vec![(*x, d)]
            }
        }
    }

    /// Collects the operations downstream of `leaf` needed to recompute `root`.
    pub fn replay_plan(&self, leaf: Var, root: Var) -> Result<ReplayPlan> {
        if !matches!(self.nodes[leaf.0].op, Op::Leaf) {
            return Err(Error::Graph(format!("node {} is not a leaf", leaf.0)));
        }
        let mut dirty = vec![false; self.nodes.len()];
        dirty[leaf.0] = true;
        let mut nodes = Vec::new();
        let mut slot = vec![usize::MAX; self.nodes.len()];
        for idx in leaf.0 + 1..=root.0 {
            if self.nodes[idx].op.inputs().iter().any(|v| dirty[v.0]) {
                dirty[idx] = true;
                slot[idx] = nodes.len();
                nodes.push(idx);
            }
        }
        Ok(ReplayPlan { leaf, root, nodes, slot })
    }

    /// Re-evaluates `plan.root` with the leaf's value replaced, reusing every
    /// recorded value that does not depend on the leaf.
    pub fn replay(&self, plan: &ReplayPlan, leaf_value: &Tensor) -> Result<Tensor> {
        if leaf_value.shape() != self.shape(plan.leaf) {
            return Err(Error::shape("replay", self.shape(plan.leaf), leaf_value.shape()));
        }
        if plan.root == plan.leaf {
            return Ok(leaf_value.clone());
        }
        if plan.slot[plan.root.0] == usize::MAX {
            return Ok(self.value(plan.root).clone());
        }
        let mut fresh: Vec<Tensor> = Vec::with_capacity(plan.nodes.len());
        for &idx in &plan.nodes {
            let node = &self.nodes[idx];
            let value = {
                let get = |v: Var| -> &Tensor {
                    if v == plan.leaf {
                        leaf_value
                    } else if plan.slot[v.0] != usize::MAX {
                        &fresh[plan.slot[v.0]]
                    } else {
                        &self.nodes[v.0].value
                    }
                };
                eval_op(&node.op, node.shape_hint.as_deref(), &get)?
            };
            fresh.push(value);
        }
        Ok(fresh.pop().expect("root is the last dirty node"))
    }
}
