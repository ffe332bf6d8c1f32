//! Recorded primitive computation with reverse-mode backward.
//!
//! The tape is an append-only arena of nodes; recording order is the
//! topological order, so the backward pass is a single reverse sweep that
//! visits every node exactly once. A tape is confined to one thread and
//! never mutates forward values during backward.

use super::tensor::Tensor;
use super::{DiffError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

enum Op {
    /// Trainable input; receives a gradient.
    Leaf,
    /// Non-trainable input; gradient is never propagated into it.
    Constant,
    Gather { table: NodeId, indices: Vec<usize> },
    Row { table: NodeId, index: usize },
    ScatterAdd { values: NodeId, indices: Vec<usize> },
    Add { lhs: NodeId, rhs: NodeId },
    Sub { lhs: NodeId, rhs: NodeId },
    Mul { lhs: NodeId, rhs: NodeId },
    Div { lhs: NodeId, rhs: NodeId },
    Scale { input: NodeId, factor: f64 },
    Relu { input: NodeId },
    Sigmoid { input: NodeId },
    Exp { input: NodeId },
    Sum { input: NodeId },
    Mean { input: NodeId },
    L2Normalize { input: NodeId },
    L2NormalizeRows { input: NodeId },
    Dot { lhs: NodeId, rhs: NodeId },
    Cosine { lhs: NodeId, rhs: NodeId },
    MatVec { matrix: NodeId, vector: NodeId },
    VecMat { vector: NodeId, matrix: NodeId },
    Linear { input: NodeId, weight: NodeId },
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, zeros if the node never received one.
    pub fn get(&self, id: NodeId, shape_like: &Tensor) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape_like.shape().to_vec()),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, needs_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable input node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable input node (data, masks, fixed coefficients).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Constant)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Select rows (matrix table) or elements (vector table). Duplicate
    /// indices are allowed; their gradients accumulate.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let out = match t.ndim() {
            2 => {
                let cols = t.cols();
                let mut data = Vec::with_capacity(indices.len() * cols);
                for &i in indices {
                    if i >= t.rows() {
                        return Err(DiffError::IndexOutOfBounds {
                            primitive: "gather",
                            index: i,
                            len: t.rows(),
                        });
                    }
                    data.extend_from_slice(t.row(i));
                }
                Tensor::matrix(indices.len(), cols, data)
            }
            1 => {
                let mut data = Vec::with_capacity(indices.len());
                for &i in indices {
                    if i >= t.len() {
                        return Err(DiffError::IndexOutOfBounds {
                            primitive: "gather",
                            index: i,
                            len: t.len(),
                        });
                    }
                    data.push(t.data()[i]);
                }
                Tensor::vector(data)
            }
            _ => {
                return Err(DiffError::ShapeMismatch {
                    primitive: "gather",
                    detail: format!("table must be 1-d or 2-d, got {:?}", t.shape()),
                })
            }
        };
        let needs = self.needs(table);
        Ok(self.push(out, needs, Op::Gather { table, indices: indices.to_vec() }))
    }

    /// Single matrix row as a vector (or single vector element as a scalar).
    pub fn row(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(table);
        let out = match t.ndim() {
            2 => {
                if index >= t.rows() {
                    return Err(DiffError::IndexOutOfBounds {
                        primitive: "row",
                        index,
                        len: t.rows(),
                    });
                }
                Tensor::vector(t.row(index).to_vec())
            }
            1 => {
                if index >= t.len() {
                    return Err(DiffError::IndexOutOfBounds {
                        primitive: "row",
                        index,
                        len: t.len(),
                    });
                }
                Tensor::scalar(t.data()[index])
            }
            _ => {
                return Err(DiffError::ShapeMismatch {
                    primitive: "row",
                    detail: format!("table must be 1-d or 2-d, got {:?}", t.shape()),
                })
            }
        };
        let needs = self.needs(table);
        Ok(self.push(out, needs, Op::Row { table, index }))
    }

    /// Accumulate rows of `values` into a zero matrix of `rows` rows:
    /// `out[indices[k]] += values[k]`. Duplicate indices accumulate.
    pub fn scatter_add(&mut self, values: NodeId, indices: &[usize], rows: usize) -> Result<NodeId> {
        let v = self.value(values);
        if v.ndim() != 2 {
            return Err(DiffError::ShapeMismatch {
                primitive: "scatter_add",
                detail: format!("values must be 2-d, got {:?}", v.shape()),
            });
        }
        if indices.len() != v.rows() {
            return Err(DiffError::ShapeMismatch {
                primitive: "scatter_add",
                detail: format!("{} indices for {} rows", indices.len(), v.rows()),
            });
        }
        let cols = v.cols();
        let mut out = Tensor::zeros(vec![rows, cols]);
        for (k, &i) in indices.iter().enumerate() {
            if i >= rows {
                return Err(DiffError::IndexOutOfBounds {
                    primitive: "scatter_add",
                    index: i,
                    len: rows,
                });
            }
            let src = v.row(k);
            let dst = out.row_mut(i);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let needs = self.needs(values);
        Ok(self.push(out, needs, Op::ScatterAdd { values, indices: indices.to_vec() }))
    }

    fn elementwise(
        &mut self,
        primitive: &'static str,
        lhs: NodeId,
        rhs: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        let out = if a.shape() == b.shape() {
            let data = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)
        } else if b.is_scalar() {
            let s = b.item();
            a.map(|x| f(x, s))
        } else if a.is_scalar() {
            let s = a.item();
            b.map(|y| f(s, y))
        } else {
            return Err(DiffError::ShapeMismatch {
                primitive,
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        };
        Ok((out, self.needs(lhs) || self.needs(rhs)))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (out, needs) = self.elementwise("add", lhs, rhs, |x, y| x + y)?;
        Ok(self.push(out, needs, Op::Add { lhs, rhs }))
    }

    pub fn sub(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (out, needs) = self.elementwise("sub", lhs, rhs, |x, y| x - y)?;
        Ok(self.push(out, needs, Op::Sub { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (out, needs) = self.elementwise("mul", lhs, rhs, |x, y| x * y)?;
        Ok(self.push(out, needs, Op::Mul { lhs, rhs }))
    }

    pub fn div(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        if self.value(rhs).iter().any(|&y| y == 0.0) {
            return Err(DiffError::DivisionByZero { primitive: "div" });
        }
        let (out, needs) = self.elementwise("div", lhs, rhs, |x, y| x / y)?;
        Ok(self.push(out, needs, Op::Div { lhs, rhs }))
    }

    /// Multiply by a compile-time-known scalar factor.
    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let out = self.value(input).map(|x| x * factor);
        let needs = self.needs(input);
        self.push(out, needs, Op::Scale { input, factor })
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|x| x.max(0.0));
        let needs = self.needs(input);
        self.push(out, needs, Op::Relu { input })
    }

    /// Alias of [`Tape::relu`]; reads better for scalar hinge terms.
    pub fn max_with_zero(&mut self, input: NodeId) -> NodeId {
        self.relu(input)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(sigmoid);
        let needs = self.needs(input);
        self.push(out, needs, Op::Sigmoid { input })
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(f64::exp);
        let needs = self.needs(input);
        self.push(out, needs, Op::Exp { input })
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(input).iter().sum());
        let needs = self.needs(input);
        self.push(out, needs, Op::Sum { input })
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input);
        if v.is_empty() {
            return Err(DiffError::ShapeMismatch {
                primitive: "mean",
                detail: "empty input".into(),
            });
        }
        let out = Tensor::scalar(v.iter().sum::<f64>() / v.len() as f64);
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Mean { input }))
    }

    /// Normalize a vector to unit L2 norm. The zero vector maps to itself
    /// (with zero gradient); callers that must not hit this case check norms
    /// themselves.
    pub fn l2_normalize(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input);
        if v.ndim() != 1 {
            return Err(DiffError::ShapeMismatch {
                primitive: "l2_normalize",
                detail: format!("expected vector, got {:?}", v.shape()),
            });
        }
        let norm = v.l2_norm();
        let out = if norm == 0.0 { v.clone() } else { v.map(|x| x / norm) };
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::L2Normalize { input }))
    }

    /// Row-wise L2 normalization of a matrix; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input);
        if v.ndim() != 2 {
            return Err(DiffError::ShapeMismatch {
                primitive: "l2_normalize_rows",
                detail: format!("expected matrix, got {:?}", v.shape()),
            });
        }
        let mut out = v.clone();
        for r in 0..v.rows() {
            let norm = v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in out.row_mut(r) {
                    *x /= norm;
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::L2NormalizeRows { input }))
    }

    pub fn dot(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.ndim() != 1 || a.shape() != b.shape() {
            return Err(DiffError::ShapeMismatch {
                primitive: "dot",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let out = Tensor::scalar(a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum());
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, needs, Op::Dot { lhs, rhs }))
    }

    /// Cosine similarity of two vectors; defined as 0 when either has zero
    /// norm so cold nodes still score.
    pub fn cosine(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.ndim() != 1 || a.shape() != b.shape() {
            return Err(DiffError::ShapeMismatch {
                primitive: "cosine",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let na = a.l2_norm();
        let nb = b.l2_norm();
        let out = if na == 0.0 || nb == 0.0 {
            Tensor::scalar(0.0)
        } else {
            let d: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum();
            Tensor::scalar(d / (na * nb))
        };
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, needs, Op::Cosine { lhs, rhs }))
    }

    /// `matrix [r,c] * vector [c] -> [r]`.
    pub fn matvec(&mut self, matrix: NodeId, vector: NodeId) -> Result<NodeId> {
        let m = self.value(matrix);
        let v = self.value(vector);
        if m.ndim() != 2 || v.ndim() != 1 || m.cols() != v.len() {
            return Err(DiffError::ShapeMismatch {
                primitive: "matvec",
                detail: format!("{:?} x {:?}", m.shape(), v.shape()),
            });
        }
        let mut data = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            data.push(m.row(r).iter().zip(v.iter()).map(|(&x, &y)| x * y).sum());
        }
        let needs = self.needs(matrix) || self.needs(vector);
        Ok(self.push(Tensor::vector(data), needs, Op::MatVec { matrix, vector }))
    }

    /// `vector [r] * matrix [r,c] -> [c]`: weighted sum of matrix rows.
    pub fn vecmat(&mut self, vector: NodeId, matrix: NodeId) -> Result<NodeId> {
        let v = self.value(vector);
        let m = self.value(matrix);
        if m.ndim() != 2 || v.ndim() != 1 || m.rows() != v.len() {
            return Err(DiffError::ShapeMismatch {
                primitive: "vecmat",
                detail: format!("{:?} x {:?}", v.shape(), m.shape()),
            });
        }
        let cols = m.cols();
        let mut data = vec![0.0; cols];
        for r in 0..m.rows() {
            let w = v.data()[r];
            if w != 0.0 {
                for (d, x) in data.iter_mut().zip(m.row(r)) {
                    *d += w * x;
                }
            }
        }
        let needs = self.needs(matrix) || self.needs(vector);
        Ok(self.push(Tensor::vector(data), needs, Op::VecMat { vector, matrix }))
    }

    /// Apply a linear map to every row: `input [k,c] * weight [r,c]^T -> [k,r]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.ndim() != 2 || w.ndim() != 2 || x.cols() != w.cols() {
            return Err(DiffError::ShapeMismatch {
                primitive: "linear",
                detail: format!("{:?} x {:?}^T", x.shape(), w.shape()),
            });
        }
        let (k, r, c) = (x.rows(), w.rows(), w.cols());
        let mut data = vec![0.0; k * r];
        for i in 0..k {
            let xi = x.row(i);
            for j in 0..r {
                let wj = w.row(j);
                let mut acc = 0.0;
                for t in 0..c {
                    acc += xi[t] * wj[t];
                }
                data[i * r + j] = acc;
            }
        }
        let needs = self.needs(input) || self.needs(weight);
        Ok(self.push(Tensor::matrix(k, r, data), needs, Op::Linear { input, weight }))
    }

    /// Reverse sweep from a scalar loss node. Forward values are left
    /// untouched; gradients accumulate per node and are returned indexed by
    /// node id.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(DiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.iter()) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        // Skip propagation into nodes that cannot need gradients.
        let live = |id: NodeId| self.nodes[id.0].needs_grad;

        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Gather { table, indices } => {
                if live(*table) {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.shape().to_vec());
                    match t.ndim() {
                        2 => {
                            for (k, &i) in indices.iter().enumerate() {
                                let src = g.row(k);
                                let dst = gt.row_mut(i);
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        _ => {
                            for (k, &i) in indices.iter().enumerate() {
                                gt.data_mut()[i] += g.data()[k];
                            }
                        }
                    }
                    add_into(grads, *table, gt);
                }
            }
            Op::Row { table, index } => {
                if live(*table) {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.shape().to_vec());
                    match t.ndim() {
                        2 => {
                            let dst = gt.row_mut(*index);
                            for (d, s) in dst.iter_mut().zip(g.iter()) {
                                *d += s;
                            }
                        }
                        _ => gt.data_mut()[*index] += g.item(),
                    }
                    add_into(grads, *table, gt);
                }
            }
            Op::ScatterAdd { values, indices } => {
                if live(*values) {
                    let v = self.value(*values);
                    let cols = v.cols();
                    let mut gv = Tensor::zeros(v.shape().to_vec());
                    for (k, &i) in indices.iter().enumerate() {
                        let src = g.row(i);
                        let dst = gv.row_mut(k);
                        dst[..cols].copy_from_slice(&src[..cols]);
                    }
                    add_into(grads, *values, gv);
                }
            }
            Op::Add { lhs, rhs } => {
                for side in [lhs, rhs] {
                    if live(*side) {
                        add_into(grads, *side, self.reduce_to(*side, g.clone()));
                    }
                }
            }
            Op::Sub { lhs, rhs } => {
                if live(*lhs) {
                    add_into(grads, *lhs, self.reduce_to(*lhs, g.clone()));
                }
                if live(*rhs) {
                    add_into(grads, *rhs, self.reduce_to(*rhs, g.map(|x| -x)));
                }
            }
            Op::Mul { lhs, rhs } => {
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                if live(*lhs) {
                    add_into(grads, *lhs, self.reduce_to(*lhs, broadcast_mul(g, b)));
                }
                if live(*rhs) {
                    add_into(grads, *rhs, self.reduce_to(*rhs, broadcast_mul(g, a)));
                }
            }
            Op::Div { lhs, rhs } => {
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                if live(*lhs) {
                    let d = broadcast_zip(g, b, |gv, bv| gv / bv);
                    add_into(grads, *lhs, self.reduce_to(*lhs, d));
                }
                if live(*rhs) {
                    // d/db (a/b) = -a / b^2
                    let out = broadcast_triple(g, a, b, |gv, av, bv| -gv * av / (bv * bv));
                    add_into(grads, *rhs, self.reduce_to(*rhs, out));
                }
            }
            Op::Scale { input, factor } => {
                if live(*input) {
                    add_into(grads, *input, g.map(|x| x * factor));
                }
            }
            Op::Relu { input } => {
                if live(*input) {
                    let x = self.value(*input);
                    let data = x.iter().zip(g.iter()).map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                    add_into(grads, *input, Tensor::new(x.shape().to_vec(), data));
                }
            }
            Op::Sigmoid { input } => {
                if live(*input) {
                    let y = &self.nodes[idx].value;
                    let data = y.iter().zip(g.iter()).map(|(&yv, &gv)| gv * yv * (1.0 - yv)).collect();
                    add_into(grads, *input, Tensor::new(y.shape().to_vec(), data));
                }
            }
            Op::Exp { input } => {
                if live(*input) {
                    let y = &self.nodes[idx].value;
                    let data = y.iter().zip(g.iter()).map(|(&yv, &gv)| gv * yv).collect();
                    add_into(grads, *input, Tensor::new(y.shape().to_vec(), data));
                }
            }
            Op::Sum { input } => {
                if live(*input) {
                    let x = self.value(*input);
                    let gv = g.item();
                    add_into(grads, *input, x.map(|_| gv));
                }
            }
            Op::Mean { input } => {
                if live(*input) {
                    let x = self.value(*input);
                    let gv = g.item() / x.len() as f64;
                    add_into(grads, *input, x.map(|_| gv));
                }
            }
            Op::L2Normalize { input } => {
                if live(*input) {
                    let x = self.value(*input);
                    let y = &self.nodes[idx].value;
                    let norm = x.l2_norm();
                    let gx = if norm == 0.0 {
                        Tensor::zeros(x.shape().to_vec())
                    } else {
                        let gy_dot_y: f64 = g.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
                        let data = g
                            .iter()
                            .zip(y.iter())
                            .map(|(&gv, &yv)| (gv - gy_dot_y * yv) / norm)
                            .collect();
                        Tensor::new(x.shape().to_vec(), data)
                    };
                    add_into(grads, *input, gx);
                }
            }
            Op::L2NormalizeRows { input } => {
                if live(*input) {
                    let x = self.value(*input);
                    let y = &self.nodes[idx].value;
                    let mut gx = Tensor::zeros(x.shape().to_vec());
                    for r in 0..x.rows() {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let gy_dot_y: f64 = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        let dst = gx.row_mut(r);
                        for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                            *d = (gv - gy_dot_y * yv) / norm;
                        }
                    }
                    add_into(grads, *input, gx);
                }
            }
            Op::Dot { lhs, rhs } => {
                let gv = g.item();
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                if live(*lhs) {
                    add_into(grads, *lhs, b.map(|x| gv * x));
                }
                if live(*rhs) {
                    add_into(grads, *rhs, a.map(|x| gv * x));
                }
            }
            Op::Cosine { lhs, rhs } => {
                let gv = g.item();
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                let na = a.l2_norm();
                let nb = b.l2_norm();
                if na == 0.0 || nb == 0.0 {
                    // Output is the constant 0 in the degenerate case.
                } else {
                    let c = self.nodes[idx].value.item();
                    if live(*lhs) {
                        let data = a
                            .iter()
                            .zip(b.iter())
                            .map(|(&av, &bv)| gv * (bv / (na * nb) - c * av / (na * na)))
                            .collect();
                        add_into(grads, *lhs, Tensor::new(a.shape().to_vec(), data));
                    }
                    if live(*rhs) {
                        let data = a
                            .iter()
                            .zip(b.iter())
                            .map(|(&av, &bv)| gv * (av / (na * nb) - c * bv / (nb * nb)))
                            .collect();
                        add_into(grads, *rhs, Tensor::new(b.shape().to_vec(), data));
                    }
                }
            }
            Op::MatVec { matrix, vector } => {
                let m = self.value(*matrix);
                let v = self.value(*vector);
                if live(*matrix) {
                    let mut gm = Tensor::zeros(m.shape().to_vec());
                    for r in 0..m.rows() {
                        let gr = g.data()[r];
                        if gr != 0.0 {
                            let dst = gm.row_mut(r);
                            for (d, &vv) in dst.iter_mut().zip(v.iter()) {
                                *d = gr * vv;
                            }
                        }
                    }
                    add_into(grads, *matrix, gm);
                }
                if live(*vector) {
                    let mut gv = vec![0.0; v.len()];
                    for r in 0..m.rows() {
                        let gr = g.data()[r];
                        if gr != 0.0 {
                            for (d, &mv) in gv.iter_mut().zip(m.row(r)) {
                                *d += gr * mv;
                            }
                        }
                    }
                    add_into(grads, *vector, Tensor::vector(gv));
                }
            }
            Op::VecMat { vector, matrix } => {
                let v = self.value(*vector);
                let m = self.value(*matrix);
                if live(*vector) {
                    let mut gv = Vec::with_capacity(v.len());
                    for r in 0..m.rows() {
                        gv.push(m.row(r).iter().zip(g.iter()).map(|(&mv, &gv_)| mv * gv_).sum());
                    }
                    add_into(grads, *vector, Tensor::vector(gv));
                }
                if live(*matrix) {
                    let mut gm = Tensor::zeros(m.shape().to_vec());
                    for r in 0..m.rows() {
                        let w = v.data()[r];
                        if w != 0.0 {
                            let dst = gm.row_mut(r);
                            for (d, &gv_) in dst.iter_mut().zip(g.iter()) {
                                *d = w * gv_;
                            }
                        }
                    }
                    add_into(grads, *matrix, gm);
                }
            }
            Op::Linear { input, weight } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (k, r) = (x.rows(), w.rows());
                if live(*input) {
                    // gx = g [k,r] * w [r,c]
                    let mut gx = Tensor::zeros(x.shape().to_vec());
                    for i in 0..k {
                        let gi = g.row(i);
                        let dst = gx.row_mut(i);
                        for j in 0..r {
                            let gij = gi[j];
                            if gij != 0.0 {
                                for (d, &wv) in dst.iter_mut().zip(w.row(j)) {
                                    *d += gij * wv;
                                }
                            }
                        }
                    }
                    add_into(grads, *input, gx);
                }
                if live(*weight) {
                    // gw = g^T [r,k] * x [k,c]
                    let mut gw = Tensor::zeros(w.shape().to_vec());
                    for i in 0..k {
                        let gi = g.row(i);
                        let xi = x.row(i);
                        for j in 0..r {
                            let gij = gi[j];
                            if gij != 0.0 {
                                let dst = gw.row_mut(j);
                                for (d, &xv) in dst.iter_mut().zip(xi) {
                                    *d += gij * xv;
                                }
                            }
                        }
                    }
                    add_into(grads, *weight, gw);
                }
            }
        }
    }

    /// Reduce a gradient to the shape of `target` (sums when the forward op
    /// broadcast a scalar operand).
    fn reduce_to(&self, target: NodeId, g: Tensor) -> Tensor {
        let t = self.value(target);
        if t.shape() == g.shape() {
            g
        } else {
            debug_assert!(t.is_scalar());
            Tensor::scalar(g.iter().sum())
        }
    }
}

fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    broadcast_zip(g, other, |a, b| a * b)
}

/// Combine the upstream gradient with an operand that may have been a
/// broadcast scalar in the forward op.
fn broadcast_zip(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if g.shape() == other.shape() {
        let data = g.iter().zip(other.iter()).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(g.shape().to_vec(), data)
    } else if other.is_scalar() {
        let s = other.item();
        g.map(|a| f(a, s))
    } else {
        // Forward broadcast a scalar lhs/rhs against `other`; upstream g has
        // other's shape.
        debug_assert_eq!(g.len(), other.len());
        let data = g.iter().zip(other.iter()).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(other.shape().to_vec(), data)
    }
}

fn broadcast_triple(g: &Tensor, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let n = g.len().max(a.len()).max(b.len());
    let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
    let data = (0..n).map(|i| f(pick(g, i), pick(a, i), pick(b, i))).collect();
    let shape = if g.len() == n {
        g.shape().to_vec()
    } else if a.len() == n {
        a.shape().to_vec()
    } else {
        b.shape().to_vec()
    };
    Tensor::new(shape, data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
