//! The recording tape: every operation pushes a node holding its forward
//! value and enough information to run the backward rule. Nodes only refer
//! to earlier nodes, so creation order is already a topological order and
//! one reverse sweep propagates all adjoints.

use std::cell::RefCell;

use super::conv3d::{conv3d_backward, conv3d_forward, PadMode};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    LinearSolve(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    SumAxes(Var, Vec<bool>),
    Concat(Vec<Var>, usize),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    MulBcastRow(Var, Var),
    Kron(Var, Var),
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        pads: [PadMode; 3],
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    /// Gradient is requested for this node (a parameter).
    requires_grad: bool,
    /// This node or one of its ancestors requires a gradient.
    needs_grad: bool,
}

/// A reverse-mode computation tape over dense real tensors.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// A constant input; no gradient is tracked through it.
    pub fn input(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, false)
    }

    /// A trainable parameter; [`Tape::backward`] accumulates its gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, true)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Accumulated gradient of a parameter (zeros until a backward pass
    /// touches it).
    pub fn grad(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    // ---- elementwise and scalar ops -------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
            let mut out = ta.clone();
            out.add_assign(tb);
            out
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), false, needs)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "sub: shape mismatch");
            Tensor::from_vec(
                ta.shape(),
                ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect(),
            )
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), false, needs)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "mul: shape mismatch");
            Tensor::from_vec(
                ta.shape(),
                ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
            )
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), false, needs)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), false, needs)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), false, needs)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), false, needs)
    }

    pub fn sin(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(f64::sin);
        let needs = self.needs(a);
        self.push(value, Op::Sin(a), false, needs)
    }

    pub fn cos(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(f64::cos);
        let needs = self.needs(a);
        self.push(value, Op::Cos(a), false, needs)
    }

    // ---- linear algebra --------------------------------------------------

    /// 2D matrix product.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            mat_mul(&nodes[a.0].value, &nodes[b.0].value)
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), false, needs)
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            mat_transpose(&nodes[a.0].value)
        };
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), false, needs)
    }

    /// `A^{-1} B` for square `A`. The backward rule is two adjoint solves;
    /// no inverse is materialized.
    pub fn linear_solve(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            real_lu_solve(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::LinearSolve(a, b), false, needs))
    }

    /// Scales column `j` of matrix `a` by `v[j]`.
    pub fn mul_bcast_row(&self, a: Var, v: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tv) = (&nodes[a.0].value, &nodes[v.0].value);
            let (m, n) = as_2d(ta);
            assert_eq!(tv.numel(), n, "mul_bcast_row: vector length mismatch");
            let mut out = ta.clone();
            for i in 0..m {
                for (x, &s) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(tv.data()) {
                    *x *= s;
                }
            }
            out
        };
        let needs = self.needs(a) || self.needs(v);
        self.push(value, Op::MulBcastRow(a, v), false, needs)
    }

    /// Kronecker product of two matrices.
    pub fn kron(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kron_forward(&nodes[a.0].value, &nodes[b.0].value)
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Kron(a, b), false, needs)
    }

    // ---- shape ops --------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.nodes.borrow()[a.0].value.reshaped(shape);
        let needs = self.needs(a);
        self.push(value, Op::Reshape(a), false, needs)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let value = {
            let nodes = self.nodes.borrow();
            let tensors: Vec<&Tensor> = parts.iter().map(|v| &nodes[v.0].value).collect();
            concat_forward(&tensors, axis)
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat(parts.to_vec(), axis), false, needs)
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            slice_forward(&nodes[a.0].value, axis, start, len)
        };
        let needs = self.needs(a);
        self.push(
            value,
            Op::Slice {
                src: a,
                axis,
                start,
                len,
            },
            false,
            needs,
        )
    }

    /// Sums away the axes marked `true`; remaining axes keep their order.
    pub fn sum_axes(&self, a: Var, axes: &[bool]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            sum_axes_forward(&nodes[a.0].value, axes)
        };
        let needs = self.needs(a);
        self.push(value, Op::SumAxes(a, axes.to_vec()), false, needs)
    }

    /// Sum of all elements (scalar output).
    pub fn sum(&self, a: Var) -> Var {
        let rank = self.shape(a).len();
        self.sum_axes(a, &vec![true; rank])
    }

    /// Global average pool: mean over the marked axes.
    pub fn gap(&self, a: Var, axes: &[bool]) -> Var {
        let shape = self.shape(a);
        let count: usize = shape
            .iter()
            .zip(axes)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .product();
        let summed = self.sum_axes(a, axes);
        self.scale(summed, 1.0 / count as f64)
    }

    /// 3D convolution over the first three axes of a `(A, B, K, C_in)`
    /// tensor with filters `(F, F, F, C_in, C_out)`, per-axis padding mode,
    /// stride 1, and one bias per output channel. Output keeps the spatial
    /// dimensions: `(A, B, K, C_out)`.
    pub fn conv3d(&self, x: Var, w: Var, b: Var, pads: [PadMode; 3]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            conv3d_forward(
                &nodes[x.0].value,
                &nodes[w.0].value,
                &nodes[b.0].value,
                pads,
            )
        };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::Conv3d { x, w, b, pads }, false, needs)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients of every parameter node
    /// are accumulated additively (call [`Tape::zero_grads`] to reset).
    pub fn backward(&self, loss: Var) -> Result<()> {
        {
            let nodes = self.nodes.borrow();
            if !nodes[loss.0].value.is_scalar() {
                return Err(Error::Invalid(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    nodes[loss.0].value.shape()
                )));
            }
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        {
            let nodes = self.nodes.borrow();
            adj[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));
            for i in (0..=loss.0).rev() {
                if adj[i].is_none() || !nodes[i].needs_grad {
                    continue;
                }
                let g = adj[i].clone().unwrap();
                self.propagate(&nodes, i, &g, &mut adj);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (i, g) in adj.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut nodes[i];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, nodes: &[Node], i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let add_to = |adj: &mut [Option<Tensor>], v: Var, contrib: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(adj, *a, g.clone());
                add_to(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(adj, *a, g.clone());
                add_to(adj, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                add_to(
                    adj,
                    *a,
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                    ),
                );
                add_to(
                    adj,
                    *b,
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    ),
                );
            }
            Op::Scale(a, c) => add_to(adj, *a, g.map(|v| v * c)),
            Op::Matmul(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                add_to(adj, *a, mat_mul(g, &mat_transpose(tb)));
                add_to(adj, *b, mat_mul(&mat_transpose(ta), g));
            }
            Op::Transpose(a) => add_to(adj, *a, mat_transpose(g)),
            Op::LinearSolve(a, b) => {
                // X = A^{-1} B. With Ḡ the upstream gradient:
                //   B̄ = A^{-T} Ḡ   (adjoint solve)
                //   Ā = -B̄ X^T
                let ta = &nodes[a.0].value;
                let x = &nodes[i].value;
                let gb = real_lu_solve(&mat_transpose(ta), g)
                    .expect("adjoint solve failed in linear_solve backward");
                let ga = mat_mul(&gb, &mat_transpose(x)).map(|v| -v);
                add_to(adj, *a, ga);
                add_to(adj, *b, gb);
            }
            Op::Relu(a) => {
                let ta = &nodes[a.0].value;
                add_to(
                    adj,
                    *a,
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    ),
                );
            }
            Op::Sigmoid(a) => {
                let s = &nodes[i].value;
                add_to(
                    adj,
                    *a,
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(s.data())
                            .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                            .collect(),
                    ),
                );
            }
            Op::Sin(a) => {
                let ta = &nodes[a.0].value;
                add_to(
                    adj,
                    *a,
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gv, &xv)| gv * xv.cos())
                            .collect(),
                    ),
                );
            }
            Op::Cos(a) => {
                let ta = &nodes[a.0].value;
                add_to(
                    adj,
                    *a,
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gv, &xv)| -gv * xv.sin())
                            .collect(),
                    ),
                );
            }
            Op::SumAxes(a, mask) => {
                let ta = &nodes[a.0].value;
                add_to(adj, *a, sum_axes_backward(g, ta.shape(), mask));
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for part in parts {
                    let len = nodes[part.0].value.shape()[*axis];
                    add_to(adj, *part, slice_forward(g, *axis, start, len));
                    start += len;
                }
            }
            Op::Slice {
                src,
                axis,
                start,
                len,
            } => {
                let full_shape = nodes[src.0].value.shape().to_vec();
                add_to(adj, *src, slice_backward(g, &full_shape, *axis, *start, *len));
            }
            Op::Reshape(a) => {
                let ta = &nodes[a.0].value;
                add_to(adj, *a, g.reshaped(ta.shape()));
            }
            Op::MulBcastRow(a, v) => {
                let ta = &nodes[a.0].value;
                let tv = &nodes[v.0].value;
                let (m, n) = as_2d(ta);
                let mut ga = g.clone();
                for i in 0..m {
                    for (x, &s) in ga.data_mut()[i * n..(i + 1) * n].iter_mut().zip(tv.data()) {
                        *x *= s;
                    }
                }
                add_to(adj, *a, ga);
                let mut gv = vec![0.0; n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let arow = &ta.data()[i * n..(i + 1) * n];
                    for ((o, &gg), &aa) in gv.iter_mut().zip(grow).zip(arow) {
                        *o += gg * aa;
                    }
                }
                add_to(adj, *v, Tensor::from_vec(tv.shape(), gv));
            }
            Op::Kron(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                let (ga, gb) = kron_backward(g, ta, tb);
                add_to(adj, *a, ga);
                add_to(adj, *b, gb);
            }
            Op::Conv3d { x, w, b, pads } => {
                let (gx, gw, gb) =
                    conv3d_backward(&nodes[x.0].value, &nodes[w.0].value, g, *pads);
                add_to(adj, *x, gx);
                add_to(adj, *w, gw);
                add_to(adj, *b, gb);
            }
        }
    }
}

// ---- tensor kernels shared by forward and backward --------------------------

pub(crate) fn as_2d(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.shape().len(), 2, "expected a 2D tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

pub(crate) fn mat_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = as_2d(a);
    let (kb, n) = as_2d(b);
    assert_eq!(ka, kb, "matmul: inner dimension mismatch");
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        for k in 0..ka {
            let aik = ad[i * ka + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * n..(k + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub(crate) fn mat_transpose(a: &Tensor) -> Tensor {
    let (m, n) = as_2d(a);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            let v = a.data()[i * n + j];
            out.data_mut()[j * m + i] = v;
        }
    }
    out
}

/// Real LU solve with partial pivoting: `A^{-1} B`.
pub(crate) fn real_lu_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, nc) = as_2d(a);
    assert_eq!(n, nc, "linear_solve: A must be square");
    let (bn, m) = as_2d(b);
    assert_eq!(bn, n, "linear_solve: B row count must match A");
    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();
    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, lu[r * n + col].abs()))
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        if pivot_mag == 0.0 || !pivot_mag.is_finite() {
            return Err(Error::SingularMatrix { pivot: col });
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..m {
                x.swap(col * m + j, pivot_row * m + j);
            }
        }
        let inv = 1.0 / lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            lu[r * n + col] = 0.0;
            for j in col + 1..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            for j in 0..m {
                x[r * m + j] -= factor * x[col * m + j];
            }
        }
    }
    for col in (0..n).rev() {
        let inv = 1.0 / lu[col * n + col];
        for j in 0..m {
            x[col * m + j] *= inv;
        }
        for r in 0..col {
            let factor = lu[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..m {
                x[r * m + j] -= factor * x[col * m + j];
            }
        }
    }
    Ok(Tensor::from_vec(&[n, m], x))
}

fn concat_forward(tensors: &[&Tensor], axis: usize) -> Tensor {
    let rank = tensors[0].shape().len();
    assert!(axis < rank, "concat axis out of range");
    for t in tensors {
        assert_eq!(t.shape().len(), rank, "concat rank mismatch");
        for ax in 0..rank {
            if ax != axis {
                assert_eq!(
                    t.shape()[ax],
                    tensors[0].shape()[ax],
                    "concat: non-axis dims must match"
                );
            }
        }
    }
    let mut shape = tensors[0].shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in tensors {
            let len = t.shape()[axis];
            let base = o * len * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
    }
    Tensor::from_vec(&shape, data)
}

fn slice_forward(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let rank = t.shape().len();
    assert!(axis < rank, "slice axis out of range");
    assert!(start + len <= t.shape()[axis], "slice out of bounds");
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis + 1..].iter().product();
    let full = t.shape()[axis];
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    Tensor::from_vec(&shape, data)
}

fn slice_backward(g: &Tensor, full_shape: &[usize], axis: usize, start: usize, len: usize) -> Tensor {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let full = full_shape[axis];
    let mut out = Tensor::zeros(full_shape);
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        out.data_mut()[dst..dst + len * inner]
            .copy_from_slice(&g.data()[src..src + len * inner]);
    }
    out
}

fn sum_axes_forward(t: &Tensor, mask: &[bool]) -> Tensor {
    assert_eq!(mask.len(), t.shape().len(), "sum_axes mask rank mismatch");
    let kept: Vec<usize> = t
        .shape()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&d, _)| d)
        .collect();
    let mut out = Tensor::zeros(&kept);
    let shape = t.shape().to_vec();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for &v in t.data() {
        let mut off = 0;
        for ax in 0..rank {
            if !mask[ax] {
                off = off * shape[ax] + idx[ax];
            }
        }
        out.data_mut()[off] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn sum_axes_backward(g: &Tensor, full_shape: &[usize], mask: &[bool]) -> Tensor {
    let mut out = Tensor::zeros(full_shape);
    let rank = full_shape.len();
    let mut idx = vec![0usize; rank];
    for o in out.data_mut().iter_mut() {
        let mut off = 0;
        for ax in 0..rank {
            if !mask[ax] {
                off = off * full_shape[ax] + idx[ax];
            }
        }
        *o = g.data()[off];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < full_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn kron_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let (p, q) = as_2d(a);
    let (m, n) = as_2d(b);
    let mut out = Tensor::zeros(&[p * m, q * n]);
    for i in 0..p {
        for j in 0..q {
            let av = a.data()[i * q + j];
            if av == 0.0 {
                continue;
            }
            for k in 0..m {
                for l in 0..n {
                    out.data_mut()[(i * m + k) * (q * n) + (j * n + l)] = av * b.data()[k * n + l];
                }
            }
        }
    }
    out
}

fn kron_backward(g: &Tensor, a: &Tensor, b: &Tensor) -> (Tensor, Tensor) {
    let (p, q) = as_2d(a);
    let (m, n) = as_2d(b);
    let mut ga = Tensor::zeros(&[p, q]);
    let mut gb = Tensor::zeros(&[m, n]);
    for i in 0..p {
        for j in 0..q {
            let av = a.data()[i * q + j];
            let mut acc = 0.0;
            for k in 0..m {
                for l in 0..n {
                    let gv = g.data()[(i * m + k) * (q * n) + (j * n + l)];
                    acc += gv * b.data()[k * n + l];
                    gb.data_mut()[k * n + l] += gv * av;
                }
            }
            ga.data_mut()[i * q + j] = acc;
        }
    }
    (ga, gb)
}
