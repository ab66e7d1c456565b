//! Reverse-mode automatic differentiation over dense arrays.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. Every node
//! stores its forward value and the indices of its operands, and operands
//! always precede the node that consumes them, so a single reverse sweep
//! over the node list propagates adjoints.
//!
//! Binary element-wise operations broadcast: each dimension of an operand
//! must either match the output or be 1. A `1 × 1` array therefore acts as
//! a scalar, an `H × 1` column as a per-row bias and a `1 × I` row as a
//! per-trajectory quantity.
//!
//! Non-smooth primitives (`relu`, `max`, `min`, `abs`, `clipped_logistic`)
//! use the derivative of the branch that is strictly active. At an exact
//! tie the gradient flows to the second operand of `max`/`min`, which is
//! always the clamp bound in this crate, so a clamped value receives 0.

use std::cell::{Ref, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::array::Array;
use super::AutodiffError;

/// `ln 3`: the clipped logistic is exactly 0 below `-LN_3` and 1 above `LN_3`.
pub const LN_3: f64 = 1.098_612_288_668_109_8;

/// Rescaled logistic `min(max(2/(1+e^{-x}) - 1/2, 0), 1)`, saturating exactly.
#[inline]
pub fn clipped_logistic(x: f64) -> f64 {
    if x <= -LN_3 {
        0.0
    } else if x >= LN_3 {
        1.0
    } else {
        (2.0 / (1.0 + (-x).exp()) - 0.5).clamp(0.0, 1.0)
    }
}

#[inline]
fn clipped_logistic_grad(x: f64) -> f64 {
    if x <= -LN_3 || x >= LN_3 {
        0.0
    } else {
        let s = 1.0 / (1.0 + (-x).exp());
        2.0 * s * (1.0 - s)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Max(usize, usize),
    Min(usize, usize),
    Neg(usize),
    AddConst(usize),
    MulConst(usize, f64),
    Abs(usize),
    Powf(usize, f64),
    Exp(usize),
    Ln(usize),
    Relu(usize),
    ClippedLogistic(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    VStack(Vec<usize>),
}

struct Node {
    op: Op,
    value: Array,
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.tape.value_ref(self.id))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array::scalar(value))
    }

    /// Concatenates arrays with equal column counts along the row axis.
    pub fn vstack<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "vstack of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].id].value.cols();
            let rows: usize = parts.iter().map(|p| nodes[p.id].value.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for p in parts {
                let v = &nodes[p.id].value;
                assert_eq!(v.cols(), cols, "vstack column mismatch");
                data.extend_from_slice(v.as_slice());
            }
            Array::from_vec(rows, cols, data)
        };
        let needs = parts.iter().any(|p| self.needs_grad(p.id));
        self.push(Op::VStack(parts.iter().map(|p| p.id).collect()), value, needs)
    }

    fn push(&self, op: Op, value: Array, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Array> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn unary(&self, a: usize, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let value = self.nodes.borrow()[a].value.map(f);
        let needs = self.needs_grad(a);
        self.push(op, value, needs)
    }

    fn binary(&self, a: usize, b: usize, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            broadcast(&nodes[a].value, &nodes[b].value, f)
        };
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(op, value, needs)
    }

    /// Branch taken by every non-smooth primitive, in recording order.
    ///
    /// Two evaluations with equal patterns lie in the same smooth piece, so a
    /// finite difference between them is free of kink artefacts.
    pub fn branch_pattern(&self) -> Vec<u8> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            match &node.op {
                Op::Relu(a) => out.extend(nodes[*a].value.as_slice().iter().map(|&x| u8::from(x > 0.0))),
                Op::Abs(a) => out.extend(nodes[*a].value.as_slice().iter().map(|&x| {
                    if x > 0.0 {
                        2
                    } else if x < 0.0 {
                        0
                    } else {
                        1
                    }
                })),
                Op::ClippedLogistic(a) => out.extend(nodes[*a].value.as_slice().iter().map(|&x| {
                    if x <= -LN_3 {
                        0
                    } else if x >= LN_3 {
                        2
                    } else {
                        1
                    }
                })),
                Op::Max(a, b) | Op::Min(a, b) => {
                    let is_max = matches!(node.op, Op::Max(..));
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (r, c) = node.value.shape();
                    for i in 0..r {
                        for j in 0..c {
                            let x = bget(va, i, j);
                            let y = bget(vb, i, j);
                            out.push(u8::from(if is_max { x > y } else { x < y }));
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Propagates adjoints from a `1 × 1` root back to every leaf.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let (rows, cols) = nodes[root.id].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NonScalarRoot { rows, cols });
        }
        let mut adj: Vec<Option<Array>> = vec![None; root.id + 1];
        adj[root.id] = Some(Array::scalar(1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match adj[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let out_shape = node.value.shape();
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].needs_grad;
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut adj[*a], val(*a).shape(), out_shape, |k| g.as_slice()[k]);
                    }
                    if wants(*b) {
                        accumulate(&mut adj[*b], val(*b).shape(), out_shape, |k| g.as_slice()[k]);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        accumulate(&mut adj[*a], val(*a).shape(), out_shape, |k| g.as_slice()[k]);
                    }
                    if wants(*b) {
                        accumulate(&mut adj[*b], val(*b).shape(), out_shape, |k| -g.as_slice()[k]);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let oc = out_shape.1;
                    if wants(*a) {
                        accumulate(&mut adj[*a], va.shape(), out_shape, |k| {
                            g.as_slice()[k] * bget(vb, k / oc, k % oc)
                        });
                    }
                    if wants(*b) {
                        accumulate(&mut adj[*b], vb.shape(), out_shape, |k| {
                            g.as_slice()[k] * bget(va, k / oc, k % oc)
                        });
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let oc = out_shape.1;
                    if wants(*a) {
                        accumulate(&mut adj[*a], va.shape(), out_shape, |k| {
                            g.as_slice()[k] / bget(vb, k / oc, k % oc)
                        });
                    }
                    if wants(*b) {
                        accumulate(&mut adj[*b], vb.shape(), out_shape, |k| {
                            let d = bget(vb, k / oc, k % oc);
                            -g.as_slice()[k] * bget(va, k / oc, k % oc) / (d * d)
                        });
                    }
                }
                Op::Max(a, b) | Op::Min(a, b) => {
                    let is_max = matches!(node.op, Op::Max(..));
                    let (va, vb) = (val(*a), val(*b));
                    let oc = out_shape.1;
                    let first_wins = |k: usize| {
                        let x = bget(va, k / oc, k % oc);
                        let y = bget(vb, k / oc, k % oc);
                        if is_max {
                            x > y
                        } else {
                            x < y
                        }
                    };
                    if wants(*a) {
                        accumulate(&mut adj[*a], va.shape(), out_shape, |k| {
                            if first_wins(k) {
                                g.as_slice()[k]
                            } else {
                                0.0
                            }
                        });
                    }
                    if wants(*b) {
                        accumulate(&mut adj[*b], vb.shape(), out_shape, |k| {
                            if first_wins(k) {
                                0.0
                            } else {
                                g.as_slice()[k]
                            }
                        });
                    }
                }
                Op::Neg(a) => {
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| -g.as_slice()[k]);
                }
                Op::AddConst(a) => {
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| g.as_slice()[k]);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| g.as_slice()[k] * c);
                }
                Op::Abs(a) => {
                    let x = val(*a).as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| {
                        let s = if x[k] > 0.0 {
                            1.0
                        } else if x[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g.as_slice()[k] * s
                    });
                }
                Op::Powf(a, p) => {
                    let x = val(*a).as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| {
                        if x[k] == 0.0 && *p > 1.0 {
                            0.0
                        } else {
                            g.as_slice()[k] * p * x[k].powf(p - 1.0)
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = node.value.as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| g.as_slice()[k] * y[k]);
                }
                Op::Ln(a) => {
                    let x = val(*a).as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| g.as_slice()[k] / x[k]);
                }
                Op::Relu(a) => {
                    let x = val(*a).as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| {
                        if x[k] > 0.0 {
                            g.as_slice()[k]
                        } else {
                            0.0
                        }
                    });
                }
                Op::ClippedLogistic(a) => {
                    let x = val(*a).as_slice();
                    accumulate(&mut adj[*a], out_shape, out_shape, |k| {
                        g.as_slice()[k] * clipped_logistic_grad(x[k])
                    });
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if wants(*a) {
                        let da = g.matmul(&vb.transpose());
                        accumulate(&mut adj[*a], va.shape(), va.shape(), |k| da.as_slice()[k]);
                    }
                    if wants(*b) {
                        let db = va.transpose().matmul(&g);
                        accumulate(&mut adj[*b], vb.shape(), vb.shape(), |k| db.as_slice()[k]);
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let shape = val(*a).shape();
                    let scale = match node.op {
                        Op::Mean(_) => 1.0 / (shape.0 * shape.1) as f64,
                        _ => 1.0,
                    };
                    let gv = g.item() * scale;
                    accumulate(&mut adj[*a], shape, shape, |_| gv);
                }
                Op::SumRows(a) => {
                    let shape = val(*a).shape();
                    let cols = shape.1;
                    accumulate(&mut adj[*a], shape, shape, |k| g.as_slice()[k % cols]);
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = val(p).shape();
                        let n = shape.0 * shape.1;
                        if wants(p) {
                            let gs = &g.as_slice()[offset..offset + n];
                            accumulate(&mut adj[p], shape, shape, |k| gs[k]);
                        }
                        offset += n;
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints of the leaves after a backward sweep.
pub struct Gradients {
    adj: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient with respect to `var`; `None` if the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Array> {
        self.adj.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`, or zeros of the right shape.
    pub fn wrt_or_zeros(&self, var: Var<'_>) -> Array {
        match self.wrt(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Array::zeros(r, c)
            }
        }
    }
}

#[inline]
fn bget(a: &Array, i: usize, j: usize) -> f64 {
    let r = if a.rows() == 1 { 0 } else { i };
    let c = if a.cols() == 1 { 0 } else { j };
    a.get(r, c)
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn broadcast(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    if a.shape() == b.shape() {
        let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        return Array::from_vec(a.rows(), a.cols(), data);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape());
    Array::from_fn(r, c, |i, j| f(bget(a, i, j), bget(b, i, j)))
}

/// Adds `contrib(k)` for every flat output index `k` into the operand's
/// adjoint, summing over broadcast dimensions.
fn accumulate(
    slot: &mut Option<Array>,
    shape: (usize, usize),
    out: (usize, usize),
    contrib: impl Fn(usize) -> f64,
) {
    let acc = slot.get_or_insert_with(|| Array::zeros(shape.0, shape.1));
    let data = acc.as_mut_slice();
    if shape == out {
        for (k, d) in data.iter_mut().enumerate() {
            *d += contrib(k);
        }
        return;
    }
    let (or, oc) = out;
    for i in 0..or {
        let ri = if shape.0 == 1 { 0 } else { i };
        for j in 0..oc {
            let cj = if shape.1 == 1 { 0 } else { j };
            data[ri * shape.1 + cj] += contrib(i * oc + j);
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Array {
        self.tape.value_ref(self.id).clone()
    }

    /// Forward value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        self.tape.value_ref(self.id).item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_ref(self.id).shape()
    }

    pub fn relu(self) -> Self {
        self.tape.unary(self.id, Op::Relu(self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(self) -> Self {
        self.tape.unary(self.id, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Self {
        self.tape.unary(self.id, Op::Ln(self.id), f64::ln)
    }

    pub fn abs(self) -> Self {
        self.tape.unary(self.id, Op::Abs(self.id), f64::abs)
    }

    /// `x^p` for a constant exponent; intended for `x ≥ 0`.
    pub fn powf(self, p: f64) -> Self {
        self.tape.unary(self.id, Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn clipped_logistic(self) -> Self {
        self.tape
            .unary(self.id, Op::ClippedLogistic(self.id), clipped_logistic)
    }

    pub fn max(self, other: Var<'t>) -> Self {
        // NaN in either operand propagates.
        self.tape.binary(self.id, other.id, Op::Max(self.id, other.id), |x, y| {
            if x > y || x.is_nan() {
                x
            } else {
                y
            }
        })
    }

    pub fn min(self, other: Var<'t>) -> Self {
        self.tape.binary(self.id, other.id, Op::Min(self.id, other.id), |x, y| {
            if x < y || x.is_nan() {
                x
            } else {
                y
            }
        })
    }

    /// `max(self, c)`; the gradient is 0 wherever the bound is active.
    pub fn max_const(self, c: f64) -> Self {
        self.max(self.tape.scalar(c))
    }

    /// `min(self, c)`; the gradient is 0 wherever the bound is active.
    pub fn min_const(self, c: f64) -> Self {
        self.min(self.tape.scalar(c))
    }

    pub fn clamp_const(self, lo: f64, hi: f64) -> Self {
        self.max_const(lo).min_const(hi)
    }

    pub fn matmul(self, other: Var<'t>) -> Self {
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            a.matmul(&b)
        };
        let needs = self.tape.needs_grad(self.id) || self.tape.needs_grad(other.id);
        self.tape.push(Op::MatMul(self.id, other.id), value, needs)
    }

    pub fn sum(self) -> Self {
        let v = self.tape.value_ref(self.id).sum();
        let needs = self.tape.needs_grad(self.id);
        self.tape.push(Op::Sum(self.id), Array::scalar(v), needs)
    }

    pub fn mean(self) -> Self {
        let v = {
            let a = self.tape.value_ref(self.id);
            a.sum() / a.len() as f64
        };
        let needs = self.tape.needs_grad(self.id);
        self.tape.push(Op::Mean(self.id), Array::scalar(v), needs)
    }

    /// Column sums: `r × c → 1 × c`.
    pub fn sum_rows(self) -> Self {
        let value = {
            let a = self.tape.value_ref(self.id);
            let mut out = vec![0.0; a.cols()];
            for i in 0..a.rows() {
                for (o, x) in out.iter_mut().zip(&a.as_slice()[i * a.cols()..(i + 1) * a.cols()]) {
                    *o += x;
                }
            }
            Array::from_vec(1, a.cols(), out)
        };
        let needs = self.tape.needs_grad(self.id);
        self.tape.push(Op::SumRows(self.id), value, needs)
    }

    /// Element-wise product with a constant array.
    pub fn mul_array(self, c: &Array) -> Self {
        self * self.tape.constant(c.clone())
    }

    pub fn add_array(self, c: &Array) -> Self {
        self + self.tape.constant(c.clone())
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Add(self.id, rhs.id), |x, y| x + y)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Sub(self.id, rhs.id), |x, y| x - y)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Mul(self.id, rhs.id), |x, y| x * y)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Div(self.id, rhs.id), |x, y| x / y)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Neg(self.id), |x| -x)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::AddConst(self.id), |x| x + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::AddConst(self.id), |x| x - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::MulConst(self.id, c), |x| x * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        // x / c and x * (1/c) differ in the last bit; keep the division.
        self / self.tape.scalar(c)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        -v + self
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        v.tape.scalar(self) / v
    }
}
