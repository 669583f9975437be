//! Tape-style computation graph with reverse-mode accumulation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and the backward pass is a single reverse sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Binary(BinOp, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    ClampMin0(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    RowDot(Var, Var),
    RowNorm(Var),
    RowCosine(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Tensor,
        probs: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "matvec",
            Op::Binary(op, ..) => op.name(),
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::ClampMin0(..) => "clamp_min0",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::RowDot(..) => "dot",
            Op::RowNorm(..) => "norm2",
            Op::RowCosine(..) => "cosine",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::SelectRows(..) => "select_rows",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled when no path reaches it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiated leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Op name of the earliest node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.op.name())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// Row-batched matrix-vector product: `x[B x in] * w[out x in]^T`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.1 != sw.1 {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: sw,
                rhs: sx,
            });
        }
        let v = self.value(x).matmul_t(self.value(w));
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(v, Op::Linear(x, w), rg))
    }

    /// `x * w^T + b` with `b` a `1 x out` row broadcast over the batch.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (r, c) = broadcast_shape(op.name(), sa, sb)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(op.apply(va[bidx(sa, i, j)], vb[bidx(sb, i, j)]));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(r, c, out), Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// `[x]_+`; same kink convention as `relu`.
    pub fn clamp_min0(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::ClampMin0(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| x.is_nan() || x <= 0.0)
        {
            return Err(Error::NonPositiveLog {
                op: "log",
                value: bad,
            });
        }
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Log(a), rg))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("sqrt of negative value"));
        }
        let v = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Sqrt(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// `log(1 + e^x)` evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    /// Row-wise dot product of two `B x K` matrices, giving `B x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out = (0..sa.0)
            .map(|r| crate::metric::dot(va.row_slice(r), vb.row_slice(r)))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(sa.0, 1, out), Op::RowDot(a, b), rg))
    }

    /// Row-wise Euclidean norm, `B x 1`. Subgradient 0 at the origin.
    pub fn norm2(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = (0..va.rows())
            .map(|r| crate::metric::norm(va.row_slice(r)))
            .collect();
        let rows = va.rows();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(rows, 1, out), Op::RowNorm(a), rg)
    }

    /// Row-wise cosine similarity, `B x 1`, clamped to `[-1, 1]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "cosine",
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(sa.0);
        for r in 0..sa.0 {
            let c = crate::metric::cosine_similarity(va.row_slice(r), vb.row_slice(r))
                .map_err(|_| Error::DegenerateVector { op: "cosine" })?;
            out.push(c);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(sa.0, 1, out), Op::RowCosine(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Per-column mean over rows, `1 x C`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let m = t.reduce_to(1, t.cols()).map(|x| x / t.rows() as f64);
        let rg = self.rg(a);
        Ok(self.push(m, Op::MeanRows(a), rg))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                lhs: t.shape(),
                rhs: (bad, 0),
            });
        }
        let picked: Vec<&[f64]> = rows.iter().map(|&r| t.row_slice(r)).collect();
        let v = if picked.is_empty() {
            Tensor::zeros(0, t.cols())
        } else {
            Tensor::from_rows(&picked)
        };
        let rg = self.rg(a);
        Ok(self.push(v, Op::SelectRows(a, rows.to_vec()), rg))
    }

    /// Per-row cross entropy `-sum_i q_i log softmax(z)_i`, giving `B x 1`.
    /// `targets` holds the (possibly smoothed) target distribution per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: z.shape(),
                rhs: targets.shape(),
            });
        }
        if !z.is_finite() {
            return Err(Error::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let (b, c) = z.shape();
        let mut probs = Vec::with_capacity(b * c);
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            let row = z.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            let q = targets.row_slice(r);
            out.push(
                -row.iter()
                    .zip(q)
                    .map(|(&x, &qi)| qi * (x - lse))
                    .sum::<f64>(),
            );
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::from_vec(b, 1, out),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs: Tensor::from_vec(b, c, probs),
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: out.shape(),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[idx] = Some(upstream);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // C = A B: dA = G B^T, dB = A^T G
                acc(*a, g.matmul_t(val(*b)));
                acc(*b, val(*a).t_matmul(g));
            }
            Op::Linear(x, w) => {
                // Y = X W^T: dX = G W, dW = G^T X
                acc(*x, g.matmul(val(*w)));
                acc(*w, g.t_matmul(val(*x)));
            }
            Op::Binary(op, a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (r, c) = g.shape();
                let (va, vb) = (val(*a).data(), val(*b).data());
                let mut ga = Vec::with_capacity(r * c);
                let mut gb = Vec::with_capacity(r * c);
                for i in 0..r {
                    for j in 0..c {
                        let gij = g.data()[i * c + j];
                        let x = va[bidx(sa, i, j)];
                        let y = vb[bidx(sb, i, j)];
                        let (da, db) = match op {
                            BinOp::Add => (gij, gij),
                            BinOp::Sub => (gij, -gij),
                            BinOp::Mul => (gij * y, gij * x),
                            BinOp::Div => (gij / y, -gij * x / (y * y)),
                        };
                        ga.push(da);
                        gb.push(db);
                    }
                }
                acc(*a, Tensor::from_vec(r, c, ga).reduce_to(sa.0, sa.1));
                acc(*b, Tensor::from_vec(r, c, gb).reduce_to(sb.0, sb.1));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) | Op::ClampMin0(a) => acc(
                *a,
                zip_map(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
            ),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |gi, y| gi * y)),
            Op::Log(a) => acc(*a, zip_map(g, val(*a), |gi, x| gi / x)),
            Op::Sqrt(a) => acc(*a, zip_map(g, &node.value, |gi, y| gi * 0.5 / y)),
            Op::Square(a) => acc(*a, zip_map(g, val(*a), |gi, x| 2.0 * gi * x)),
            Op::Softplus(a) => acc(*a, zip_map(g, val(*a), |gi, x| gi * sigmoid(x))),
            Op::RowDot(a, b) => {
                acc(*a, scale_rows(val(*b), g, |_| 1.0));
                acc(*b, scale_rows(val(*a), g, |_| 1.0));
            }
            Op::RowNorm(a) => {
                let n = &node.value;
                acc(
                    *a,
                    scale_rows(val(*a), g, |r| {
                        let nr = n.data()[r];
                        if nr > 0.0 {
                            1.0 / nr
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::RowCosine(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (rows, k) = ta.shape();
                let mut ga = Vec::with_capacity(rows * k);
                let mut gb = Vec::with_capacity(rows * k);
                for r in 0..rows {
                    let (x, y) = (ta.row_slice(r), tb.row_slice(r));
                    let nx = crate::metric::norm(x);
                    let ny = crate::metric::norm(y);
                    let cos = crate::metric::dot(x, y) / (nx * ny);
                    let gr = g.data()[r];
                    for i in 0..k {
                        ga.push(gr * (y[i] / (nx * ny) - cos * x[i] / (nx * nx)));
                        gb.push(gr * (x[i] / (nx * ny) - cos * y[i] / (ny * ny)));
                    }
                }
                acc(*a, Tensor::from_vec(rows, k, ga));
                acc(*b, Tensor::from_vec(rows, k, gb));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[i * c + j] = g.data()[j] / r as f64;
                    }
                }
                acc(*a, out);
            }
            Op::SelectRows(a, rows) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        out.data_mut()[src * c + j] += g.data()[k * c + j];
                    }
                }
                acc(*a, out);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (b, c) = probs.shape();
                let mut out = Vec::with_capacity(b * c);
                for r in 0..b {
                    let q = targets.row_slice(r);
                    let mass: f64 = q.iter().sum();
                    let gr = g.data()[r];
                    for (p, qi) in probs.row_slice(r).iter().zip(q) {
                        out.push(gr * (mass * p - qi));
                    }
                }
                acc(*logits, Tensor::from_vec(b, c, out));
            }
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data)
}

/// Row `r` of the result is `m[r] * g[r] * factor(r)`.
fn scale_rows(m: &Tensor, g: &Tensor, factor: impl Fn(usize) -> f64) -> Tensor {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let s = g.data()[r] * factor(r);
        out.extend(m.row_slice(r).iter().map(|x| x * s));
    }
    Tensor::from_vec(rows, cols, out)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.exp(x);
        assert_eq!(g.value(y).item(), 1.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item(), 1.0);
    }

    #[test]
    fn clamp_inactive_branch_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-0.5));
        let y = g.clamp_min0(x);
        assert_eq!(g.value(y).item(), 0.0);
        assert_eq!(g.backward(y).unwrap().wrt(x).item(), 0.0);

        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.relu(x);
        assert_eq!(g.backward(y).unwrap().wrt(x).item(), 0.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::NonPositiveLog { .. })));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(2, 3));
        let b = g.param(Tensor::zeros(3, 2));
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(g.dot(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn shared_node_accumulates() {
        // y = x*x + x at x = 3 -> dy/dx = 7
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        assert_eq!(g.value(y).item(), 12.0);
        assert_eq!(g.backward(y).unwrap().wrt(x).item(), 7.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(5.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x).item(), 2.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(-20.0) - 2.061153620314381e-9).abs() < 1e-22);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn non_finite_names_op() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(800.0));
        let _ = g.exp(x);
        assert_eq!(g.first_non_finite(), Some("exp"));
    }

    #[test]
    fn softmax_cross_entropy_uniform() {
        let mut g = Graph::new();
        let z = g.param(Tensor::zeros(1, 10));
        let mut q = Tensor::zeros(1, 10);
        q.data_mut()[3] = 1.0;
        let ce = g.softmax_cross_entropy(z, q).unwrap();
        assert!((g.value(ce).item() - 10f64.ln()).abs() < 1e-12);
        let s = g.sum(ce);
        let grad = g.backward(s).unwrap().wrt(z);
        assert!((grad.data()[3] - (0.1 - 1.0)).abs() < 1e-12);
        assert!((grad.data()[0] - 0.1).abs() < 1e-12);
    }
}
