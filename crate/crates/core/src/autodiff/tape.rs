use std::cell::{Ref, RefCell};
use std::ops::Range;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Tanh(usize),
    Exp(usize),
    Pow(usize, f64),
    XOverExpm1(usize),
    Sum(usize),
    Mean(usize),
    SquaredNorm(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recording of tensor operations.
///
/// Operations whose inputs are all constants are evaluated eagerly and stored
/// as constants; only computations that depend on a parameter registered via
/// [`Tape::param`] carry a backward rule. A tape is meant to live for a single
/// forward/backward pass and is confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// Result shape and per-operand cycle lengths for elementwise ops where one
/// operand's shape is a suffix of the other's.
fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        Err(Error::dim(op, format!("{a:?} vs {b:?}")))
    }
}

/// Batch layout of a matmul: `(batch_a, batch_b, p, q, r)`.
fn matmul_dims(
    a: &[usize],
    b: &[usize],
) -> Result<(Option<usize>, Option<usize>, usize, usize, usize)> {
    let bad = || Error::dim("matmul", format!("{a:?} x {b:?}"));
    let (ba, p, q) = match a {
        [p, q] => (None, *p, *q),
        [n, p, q] => (Some(*n), *p, *q),
        _ => return Err(bad()),
    };
    let (bb, q2, r) = match b {
        [q, r] => (None, *q, *r),
        [n, q, r] => (Some(*n), *q, *r),
        _ => return Err(bad()),
    };
    if q != q2 {
        return Err(bad());
    }
    if let (Some(x), Some(y)) = (ba, bb) {
        if x != y {
            return Err(bad());
        }
    }
    Ok((ba, bb, p, q, r))
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `x / (eˣ − 1)`, continuous through its removable singularity at 0.
pub fn x_over_expm1(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x / 2.0 + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

pub(crate) fn x_over_expm1_deriv(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        -0.5 + x / 6.0 - x * x2 / 180.0 + x * x2 * x2 / 5040.0
    } else {
        let em1 = x.exp_m1();
        (em1 - x * x.exp()) / (em1 * em1)
    }
}

fn powf(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id }
    }

    /// Registers a value that takes no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Registers a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn value_ref(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn elementwise(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.id], &nodes[b.id]);
        let shape = broadcast(name, na.value.shape(), nb.value.shape())?;
        let n: usize = shape.iter().product();
        let (xa, xb) = (na.value.data(), nb.value.data());
        let (la, lb) = (xa.len(), xb.len());
        let data: Vec<f64> = if la == lb {
            xa.iter().zip(xb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(xa[i % la], xb[i % lb])).collect()
        };
        let rg = na.requires_grad || nb.requires_grad;
        drop(nodes);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    /// Elementwise sum; one operand's shape may be a suffix of the other's.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let value = node.value.map(f);
        let rg = node.requires_grad;
        drop(nodes);
        self.push(value, op, rg)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.id, c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.id))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.id))
    }

    /// Elementwise `aᵖ` for a constant exponent.
    pub fn pow(&self, a: Var, p: f64) -> Var {
        self.unary(a, |x| powf(x, p), Op::Pow(a.id, p))
    }

    /// Elementwise `x / (eˣ − 1)`.
    pub fn x_over_expm1(&self, a: Var) -> Var {
        self.unary(a, x_over_expm1, Op::XOverExpm1(a.id))
    }

    fn reduce(&self, a: Var, f: impl Fn(&[f64]) -> f64, op: Op) -> Var {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let value = Tensor::scalar(f(node.value.data()));
        let rg = node.requires_grad;
        drop(nodes);
        self.push(value, op, rg)
    }

    pub fn sum(&self, a: Var) -> Var {
        self.reduce(a, |x| x.iter().sum(), Op::Sum(a.id))
    }

    pub fn mean(&self, a: Var) -> Var {
        self.reduce(
            a,
            |x| x.iter().sum::<f64>() / x.len() as f64,
            Op::Mean(a.id),
        )
    }

    /// Sum of squares of all entries.
    pub fn squared_norm(&self, a: Var) -> Var {
        self.reduce(a, |x| x.iter().map(|v| v * v).sum(), Op::SquaredNorm(a.id))
    }

    /// Matrix product. Either operand may carry a leading batch axis; when both
    /// do, the batch extents must agree.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.id], &nodes[b.id]);
        let (ba, bb, p, q, r) = matmul_dims(na.value.shape(), nb.value.shape())?;
        let batch = ba.or(bb);
        let nbatch = batch.unwrap_or(1);
        let mut out = vec![0.0; nbatch * p * r];
        let (xa, xb) = (na.value.data(), nb.value.data());
        for k in 0..nbatch {
            let ao = if ba.is_some() { k * p * q } else { 0 };
            let bo = if bb.is_some() { k * q * r } else { 0 };
            gemm_nn(
                &xa[ao..ao + p * q],
                &xb[bo..bo + q * r],
                &mut out[k * p * r..(k + 1) * p * r],
                p,
                q,
                r,
            );
        }
        let shape = match batch {
            Some(n) => vec![n, p, r],
            None => vec![p, r],
        };
        let rg = na.requires_grad || nb.requires_grad;
        drop(nodes);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a.id, b.id), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let shape = node.value.shape();
        if shape.len() < 2 {
            return Err(Error::dim("transpose", format!("{shape:?}")));
        }
        let nd = shape.len();
        let (p, q) = (shape[nd - 2], shape[nd - 1]);
        let value = transpose_last2(node.value.data(), p, q);
        let mut out_shape = shape.to_vec();
        out_shape.swap(nd - 2, nd - 1);
        let rg = node.requires_grad;
        drop(nodes);
        Ok(self.push(
            Tensor::from_parts(out_shape, value),
            Op::Transpose(a.id),
            rg,
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let value = node.value.clone().reshape(shape)?;
        let rg = node.requires_grad;
        drop(nodes);
        Ok(self.push(value, Op::Reshape(a.id), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = nodes[first.id].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for v in parts {
            let s = nodes[v.id].value.shape();
            let conform = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !conform {
                return Err(Error::dim(
                    "concat",
                    format!("{base:?} vs {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in parts {
                let t = &nodes[v.id].value;
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|v| nodes[v.id].requires_grad);
        drop(nodes);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: parts.iter().map(|v| v.id).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Selects `range` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let shape = node.value.shape();
        if axis >= shape.len() || range.start > range.end || range.end > shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("{range:?} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let width = range.end - range.start;
        let mut out = Vec::with_capacity(outer * width * inner);
        let data = node.value.data();
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&data[base + range.start * inner..base + range.end * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = width;
        let rg = node.requires_grad;
        drop(nodes);
        Ok(self.push(
            Tensor::from_parts(new_shape, out),
            Op::Slice {
                input: a.id,
                axis,
                start: range.start,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn transpose_last2(data: &[f64], p: usize, q: usize) -> Vec<f64> {
    let block = p * q;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..p {
            for j in 0..q {
                dst[j * p + i] = src[i * q + j];
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, contrib: Tensor) {
    match &mut grads[id] {
        Some(g) => {
            for (x, y) in g.data_mut().iter_mut().zip(contrib.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Sums `g` down to `shape` when `shape` is a broadcast suffix of `g`.
fn reduce_to(g: &[f64], shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    if n == g.len() {
        return Tensor::from_parts(shape.to_vec(), g.to_vec());
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, x) in out.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) {
                -1.0
            } else {
                1.0
            };
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            if na.requires_grad {
                let t = reduce_to(gd, na.value.shape());
                accumulate(grads, *a, t);
            }
            if nb.requires_grad {
                let mut t = reduce_to(gd, nb.value.shape());
                if sign < 0.0 {
                    t.data_mut().iter_mut().for_each(|x| *x = -*x);
                }
                accumulate(grads, *b, t);
            }
        }
        Op::Mul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let (xa, xb) = (na.value.data(), nb.value.data());
            let (la, lb) = (xa.len(), xb.len());
            if na.requires_grad {
                let prod: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * xb[i % lb]).collect();
                accumulate(grads, *a, reduce_to(&prod, na.value.shape()));
            }
            if nb.requires_grad {
                let prod: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * xa[i % la]).collect();
                accumulate(grads, *b, reduce_to(&prod, nb.value.shape()));
            }
        }
        Op::Scale(a, c) => {
            accumulate(grads, *a, g.map(|x| c * x));
        }
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let (ba, bb, p, q, r) =
                matmul_dims(na.value.shape(), nb.value.shape()).expect("validated in forward");
            let nbatch = ba.or(bb).unwrap_or(1);
            let (xa, xb) = (na.value.data(), nb.value.data());
            if na.requires_grad {
                let mut ga = vec![0.0; xa.len()];
                for k in 0..nbatch {
                    let ao = if ba.is_some() { k * p * q } else { 0 };
                    let bo = if bb.is_some() { k * q * r } else { 0 };
                    gemm_nt(
                        &gd[k * p * r..(k + 1) * p * r],
                        &xb[bo..bo + q * r],
                        &mut ga[ao..ao + p * q],
                        p,
                        q,
                        r,
                    );
                }
                accumulate(grads, *a, Tensor::from_parts(na.value.shape().to_vec(), ga));
            }
            if nb.requires_grad {
                let mut gb = vec![0.0; xb.len()];
                for k in 0..nbatch {
                    let ao = if ba.is_some() { k * p * q } else { 0 };
                    let bo = if bb.is_some() { k * q * r } else { 0 };
                    gemm_tn(
                        &xa[ao..ao + p * q],
                        &gd[k * p * r..(k + 1) * p * r],
                        &mut gb[bo..bo + q * r],
                        p,
                        q,
                        r,
                    );
                }
                accumulate(grads, *b, Tensor::from_parts(nb.value.shape().to_vec(), gb));
            }
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            let data = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
        }
        Op::Exp(a) => {
            let y = node.value.data();
            let data = gd.iter().zip(y).map(|(g, y)| g * y).collect();
            accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
        }
        Op::Pow(a, p) => {
            let x = nodes[*a].value.data();
            let data = gd
                .iter()
                .zip(x)
                .map(|(g, x)| g * p * powf(*x, p - 1.0))
                .collect();
            accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
        }
        Op::XOverExpm1(a) => {
            let x = nodes[*a].value.data();
            let data = gd
                .iter()
                .zip(x)
                .map(|(g, x)| g * x_over_expm1_deriv(*x))
                .collect();
            accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
        }
        Op::Sum(a) | Op::Mean(a) => {
            let shape = nodes[*a].value.shape();
            let n: usize = shape.iter().product();
            let scale = if matches!(node.op, Op::Mean(_)) {
                1.0 / n as f64
            } else {
                1.0
            };
            accumulate(grads, *a, Tensor::full(shape, gd[0] * scale));
        }
        Op::SquaredNorm(a) => {
            let x = &nodes[*a].value;
            accumulate(grads, *a, x.map(|v| 2.0 * v * gd[0]));
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_split(g.shape(), *axis);
            let mut offset = 0;
            let total_chunk = g.shape()[*axis] * inner;
            for &id in inputs {
                let shape = nodes[id].value.shape();
                let chunk = shape[*axis] * inner;
                if nodes[id].requires_grad {
                    let mut part = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let base = o * total_chunk + offset;
                        part.extend_from_slice(&gd[base..base + chunk]);
                    }
                    accumulate(grads, id, Tensor::from_parts(shape.to_vec(), part));
                }
                offset += chunk;
            }
        }
        Op::Slice { input, axis, start } => {
            let shape = nodes[*input].value.shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let width = g.shape()[*axis];
            let mut full = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                let src = o * width * inner;
                full[dst..dst + width * inner].copy_from_slice(&gd[src..src + width * inner]);
            }
            accumulate(grads, *input, Tensor::from_parts(shape.to_vec(), full));
        }
        Op::Transpose(a) => {
            let shape = g.shape();
            let nd = shape.len();
            let data = transpose_last2(gd, shape[nd - 2], shape[nd - 1]);
            accumulate(
                grads,
                *a,
                Tensor::from_parts(nodes[*a].value.shape().to_vec(), data),
            );
        }
        Op::Reshape(a) => {
            accumulate(
                grads,
                *a,
                Tensor::from_parts(nodes[*a].value.shape().to_vec(), gd.to_vec()),
            );
        }
    }
}
