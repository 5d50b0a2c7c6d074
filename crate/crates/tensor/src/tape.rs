//! Wengert-style tape: every op appends a node holding its value and enough
//! saved state to run its vector-Jacobian product in reverse order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

/// Deliberate gradient corruption, used as a negative control for the
/// finite-difference checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Multiply the left-operand gradient of every matmul by 2.
    DoubleMatmulLhs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Softmax { x: usize, axis: usize },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy { scores: usize, target: usize, probs: Vec<f64> },
    Transpose(usize),
    Narrow { x: usize, axis: usize, start: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Reshape(usize),
    Sum(usize),
    Mean(Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
    grads: HashMap<usize, Vec<f64>>,
}

/// Records a forward computation for a single reverse pass.
///
/// A tape is single-threaded; independent tapes may live on different threads.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
    fault: Option<GradFault>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * s];
    for i in 0..p {
        let row = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * s..(k + 1) * s];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Self {
            inner: RefCell::default(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Registers a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let rg = tensor.requires_grad();
        let mut t = tensor;
        t.clear_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Runs the reverse pass from a scalar `loss`.
    ///
    /// Gradients accumulate across fan-out and are afterwards available
    /// through [`Tape::grad`] for every leaf that requires one.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::ForeignVar);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_value = Rc::clone(&inner.nodes[loss.id].value);
        if loss_value.numel() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                shape: loss_value.shape().to_vec(),
            });
        }
        inner.consumed = true;

        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut leaf_grads = HashMap::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    leaf_grads.insert(id, g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (p, q, s) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if needs(*a) {
                        let bt = transpose_raw(bv.data(), q, s);
                        let mut ga = matmul_raw(&g, &bt, p, s, q);
                        if self.fault == Some(GradFault::DoubleMatmulLhs) {
                            ga.iter_mut().for_each(|x| *x *= 2.0);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if needs(*b) {
                        let at = transpose_raw(av.data(), p, q);
                        accumulate(&mut grads, *b, matmul_raw(&at, &g, q, p, s));
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if needs(*row) {
                        let n = val(*row).numel();
                        let mut gr = vec![0.0; n];
                        for chunk in g.chunks(n) {
                            gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                        accumulate(&mut grads, *row, gr);
                    }
                    if needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let gb = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, gb);
                    }
                    if needs(*b) {
                        let ga = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, ga);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let gx = g
                        .iter()
                        .zip(val(*a).data())
                        .map(|(gy, x)| if *x > 0.0 { *gy } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, gx);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, dim, inner_n) = axis_split(node.value.shape(), *axis);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner_n {
                            let idx = |k: usize| (o * dim + k) * inner_n + i;
                            let dot: f64 = (0..dim).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..dim {
                                gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gain).data();
                    let n = gv.len();
                    if needs(*gain) || needs(*bias) {
                        let mut gg = vec![0.0; n];
                        let mut gb = vec![0.0; n];
                        for (gy, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                            for j in 0..n {
                                gg[j] += gy[j] * xh[j];
                                gb[j] += gy[j];
                            }
                        }
                        if needs(*gain) {
                            accumulate(&mut grads, *gain, gg);
                        }
                        if needs(*bias) {
                            accumulate(&mut grads, *bias, gb);
                        }
                    }
                    if needs(*x) {
                        let mut gx = vec![0.0; g.len()];
                        let nf = n as f64;
                        for (r, ((gy, xh), out)) in g
                            .chunks(n)
                            .zip(xhat.chunks(n))
                            .zip(gx.chunks_mut(n))
                            .enumerate()
                        {
                            let dxh: Vec<f64> = gy.iter().zip(gv).map(|(a, b)| a * b).collect();
                            let sum_d: f64 = dxh.iter().sum();
                            let sum_dx: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                out[j] = inv_std[r] / nf * (nf * dxh[j] - sum_d - xh[j] * sum_dx);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::CrossEntropy {
                    scores,
                    target,
                    probs,
                } => {
                    let mut gx: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    gx[*target] -= g[0];
                    accumulate(&mut grads, *scores, gx);
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    accumulate(&mut grads, *a, transpose_raw(&g, s[0], s[1]));
                }
                Op::Narrow { x, axis, start } => {
                    let xs = val(*x).shape();
                    let (outer, dim, inner_n) = axis_split(xs, *axis);
                    let len = node.value.shape()[*axis];
                    let mut gx = vec![0.0; numel(xs)];
                    for o in 0..outer {
                        let src = &g[o * len * inner_n..(o + 1) * len * inner_n];
                        let dst_off = (o * dim + start) * inner_n;
                        gx[dst_off..dst_off + len * inner_n].copy_from_slice(src);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { parts, axis } => {
                    let out_shape = node.value.shape();
                    let (outer, total, inner_n) = axis_split(out_shape, *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        if needs(p) {
                            let mut gp = Vec::with_capacity(outer * len * inner_n);
                            for o in 0..outer {
                                let s = (o * total + offset) * inner_n;
                                gp.extend_from_slice(&g[s..s + len * inner_n]);
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += len;
                    }
                }
                Op::Sum(a) => {
                    let n = val(*a).numel();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(parts) => {
                    let k = parts.len() as f64;
                    for &p in parts {
                        if needs(p) {
                            accumulate(&mut grads, p, g.iter().map(|x| x / k).collect());
                        }
                    }
                }
            }
        }
        inner.grads = leaf_grads;
        Ok(())
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` when the leaf
    /// was unreachable or does not require a gradient.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let g = inner.grads.get(&var.id)?;
        let shape = inner.nodes[var.id].value.shape().to_vec();
        Tensor::new(&shape, g.clone()).ok()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().data().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn requires(&self) -> bool {
        self.tape.needs_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires())
    }

    /// Matrix product of rank-2 operands.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (p, q, s) = (sa[0], sa[1], sb[1]);
        let out = Tensor::new(&[p, s], matmul_raw(a.data(), b.data(), p, q, s))?;
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::Shape {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(a.shape(), data)?;
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(out, Op::Add(self.id, other.id), rg))
    }

    /// Adds a rank-1 `row` to every trailing-dimension slice of `self`.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(row)?;
        let (a, r) = (self.value(), row.value());
        let n = r.numel();
        if r.rank() != 1 || a.shape().last() != Some(&n) {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: a.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(r.data()).for_each(|(x, y)| *x += y);
        }
        let out = Tensor::new(a.shape(), data)?;
        let rg = self.requires() || row.requires();
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id), rg))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::Shape {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape(), data)?;
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(out, Op::Mul(self.id, other.id), rg))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(a.shape(), data).expect("shape preserved");
        self.unary(out, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x + c).collect();
        let out = Tensor::new(a.shape(), data).expect("shape preserved");
        self.unary(out, Op::AddScalar(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::new(a.shape(), data).expect("shape preserved");
        self.unary(out, Op::Relu(self.id))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: a.rank(),
            });
        }
        let x = a.data();
        let (outer, dim, inner) = axis_split(a.shape(), axis);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * dim + k) * inner + i;
                let max = (0..dim).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..dim {
                    let e = (x[idx(k)] - max).exp();
                    y[idx(k)] = e;
                    z += e;
                }
                for k in 0..dim {
                    y[idx(k)] /= z;
                }
            }
        }
        let out = Tensor::new(a.shape(), y)?;
        Ok(self.unary(out, Op::Softmax { x: self.id, axis }))
    }

    /// Normalizes over the last dimension, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Var<'t>, bias: &Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(gain)?;
        self.same_tape(bias)?;
        let (a, gv, bv) = (self.value(), gain.value(), bias.value());
        let n = *a.shape().last().ok_or(TensorError::Rank {
            op: "layer_norm",
            shape: Vec::new(),
        })?;
        if gv.rank() != 1 || gv.numel() != n || bv.shape() != gv.shape() {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: a.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if eps < 0.0 || (n == 1 && eps == 0.0) {
            return Err(TensorError::DegenerateNorm);
        }
        let rows = a.numel() / n;
        let mut xhat = vec![0.0; a.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; a.numel()];
        for r in 0..rows {
            let row = &a.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                y[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(a.shape(), y)?;
        let rg = self.requires() || gain.requires() || bias.requires();
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `-log softmax(scores)[target]` for a rank-1 score vector.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 1 {
            return Err(TensorError::Rank {
                op: "cross_entropy",
                shape: a.shape().to_vec(),
            });
        }
        if target >= a.numel() {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: target,
                size: a.numel(),
            });
        }
        let x = a.data();
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        let probs: Vec<f64> = x.iter().map(|v| (v - lse).exp()).collect();
        let out = Tensor::scalar(lse - x[target]);
        Ok(self.unary(
            out,
            Op::CrossEntropy {
                scores: self.id,
                target,
                probs,
            },
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                shape: a.shape().to_vec(),
            });
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::new(&[c, r], transpose_raw(a.data(), r, c))?;
        Ok(self.unary(out, Op::Transpose(self.id)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: a.rank(),
            });
        }
        let (outer, dim, inner) = axis_split(a.shape(), axis);
        if len == 0 || start + len > dim {
            return Err(TensorError::Index {
                op: "narrow",
                index: start + len,
                size: dim,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * dim + start) * inner;
            data.extend_from_slice(&a.data()[s..s + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        Ok(self.unary(
            out,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    /// Row `i` of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        let cols = self.shape()[1];
        self.narrow(0, i, 1)?.reshape(&[cols])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let out = Tensor::new(shape, a.data().to_vec()).map_err(|_| TensorError::Shape {
            op: "reshape",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        })?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let total = self.value().data().iter().sum();
        self.unary(Tensor::scalar(total), Op::Sum(self.id))
    }
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let base = values[0].shape();
    if axis >= base.len() {
        return Err(TensorError::Axis {
            op: "concat",
            axis,
            rank: base.len(),
        });
    }
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(base)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(TensorError::Shape {
                op: "concat",
                lhs: base.to_vec(),
                rhs: s.to_vec(),
            });
        }
    }
    let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
    let (outer, _, inner) = axis_split(base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = base.to_vec();
    shape[axis] = total;
    let out = Tensor::new(&shape, data)?;
    let rg = parts.iter().any(Var::requires);
    Ok(first.tape.push(
        out,
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            axis,
        },
        rg,
    ))
}

/// Elementwise arithmetic mean of same-shape tensors.
pub fn mean<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Invalid("mean of zero tensors".into()))?;
    let base = first.value();
    let mut acc = vec![0.0; base.numel()];
    for p in parts {
        first.same_tape(p)?;
        let v = p.value();
        if v.shape() != base.shape() {
            return Err(TensorError::Shape {
                op: "mean",
                lhs: base.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        acc.iter_mut().zip(v.data()).for_each(|(a, b)| *a += b);
    }
    let k = parts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    let out = Tensor::new(base.shape(), acc)?;
    let rg = parts.iter().any(Var::requires);
    Ok(first.tape.push(
        out,
        Op::Mean(parts.iter().map(|p| p.id).collect()),
        rg,
    ))
}
