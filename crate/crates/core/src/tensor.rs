//! Dense row-major matrices and a small reverse-mode differentiation tape.
//!
//! The tape records every operation in the order it is executed, so node
//! indices are already a topological order and `backward` walks them in
//! reverse. The operation set is exactly what the gated GNN needs.

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("cross-entropy mask selects no rows")]
    EmptyMask,
    #[error("row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("class {class} out of range for {classes} logits")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidDropout(f64),
    #[error("non-finite {0} at tape node {1}")]
    NonFinite(&'static str, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// `out += a · b`, i-k-j loop order.
fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += aᵀ · b` without materializing the transpose.
fn matmul_at_b_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for k in 0..a.rows {
        let b_row = &b.data[k * n..(k + 1) * n];
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
}

/// `out += a · bᵀ`.
fn matmul_a_bt_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let b_row = &b.data[j * b.cols..(j + 1) * b.cols];
            out.data[i * out.cols + j] += dot(a_row, b_row);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// One weighted message `target += coef · gate[gate] · h[source]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub target: usize,
    pub source: usize,
    pub gate: usize,
    pub coef: f64,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    SliceRows(Var, usize),
    Sum(Var),
    PairGate {
        left: Var,
        right: Var,
        bias: Var,
        pairs: Rc<[(usize, usize)]>,
        tau: f64,
    },
    GatherScatter {
        h: Var,
        gates: Var,
        messages: Rc<[Message]>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        rows: Rc<[usize]>,
        targets: Rc<[usize]>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn get_ref(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

/// Records operations for reverse-mode accumulation. Single-threaded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 × n` row vector to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ar, ac) = self.shape(a);
        if self.shape(bias) != (1, ac) {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                left: (ar, ac),
                right: self.shape(bias),
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..ar {
            for (x, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *x += bv;
            }
        }
        Ok(self.push(value, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu_scalar);
        self.push(value, Op::Gelu(a))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidDropout(p));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data);
        Ok(self.push(value, Op::Dropout(a, mask)))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(TensorError::RowOutOfRange {
                row: start + len,
                rows: x.rows(),
            });
        }
        let cols = x.cols();
        let value = Matrix::from_vec(len, cols, x.data()[start * cols..(start + len) * cols].to_vec());
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a))
    }

    /// Self-gating scores `tanh((left[i] + right[j] + bias) / tau)` for every
    /// pair `(i, j)`, as a `pairs.len() × 1` column. `left` and `right` are
    /// `n × 1` projections of the node embeddings, `bias` is `1 × 1`.
    pub fn pair_gate(
        &mut self,
        left: Var,
        right: Var,
        bias: Var,
        pairs: Rc<[(usize, usize)]>,
        tau: f64,
    ) -> Result<Var, TensorError> {
        let (l, r, b) = (self.value(left), self.value(right), self.value(bias));
        if l.cols() != 1 || r.shape() != l.shape() || b.shape() != (1, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "pair_gate",
                left: l.shape(),
                right: r.shape(),
            });
        }
        let n = l.rows();
        let bias_value = b.item();
        let mut data = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs.iter() {
            if i >= n || j >= n {
                return Err(TensorError::RowOutOfRange { row: i.max(j), rows: n });
            }
            data.push(((l.data()[i] + r.data()[j] + bias_value) / tau).tanh());
        }
        let value = Matrix::from_vec(pairs.len(), 1, data);
        Ok(self.push(
            value,
            Op::PairGate {
                left,
                right,
                bias,
                pairs,
                tau,
            },
        ))
    }

    /// Sparse weighted aggregation: for every message,
    /// `out[target] += coef · gates[gate] · h[source]`.
    pub fn gather_scatter(&mut self, h: Var, gates: Var, messages: Rc<[Message]>) -> Result<Var, TensorError> {
        let (hv, gv) = (self.value(h), self.value(gates));
        if gv.cols() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_scatter",
                left: hv.shape(),
                right: gv.shape(),
            });
        }
        let (n, m) = hv.shape();
        let mut out = Matrix::zeros(n, m);
        for msg in messages.iter() {
            if msg.target >= n || msg.source >= n {
                return Err(TensorError::RowOutOfRange {
                    row: msg.target.max(msg.source),
                    rows: n,
                });
            }
            if msg.gate >= gv.rows() {
                return Err(TensorError::RowOutOfRange {
                    row: msg.gate,
                    rows: gv.rows(),
                });
            }
            let w = msg.coef * gv.data()[msg.gate];
            let src = &hv.data()[msg.source * m..(msg.source + 1) * m];
            let dst = &mut out.data[msg.target * m..(msg.target + 1) * m];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += w * s;
            }
        }
        Ok(self.push(out, Op::GatherScatter { h, gates, messages }))
    }

    /// Mean over `rows` of `-log softmax(logits[row])[target]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        rows: Rc<[usize]>,
        targets: Rc<[usize]>,
    ) -> Result<Var, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::EmptyMask);
        }
        assert_eq!(rows.len(), targets.len(), "one target per selected row");
        let x = self.value(logits);
        let (n, c) = x.shape();
        let mut probs = Matrix::zeros(rows.len(), c);
        let mut loss = 0.0;
        for (k, (&r, &t)) in rows.iter().zip(targets.iter()).enumerate() {
            if r >= n {
                return Err(TensorError::RowOutOfRange { row: r, rows: n });
            }
            if t >= c {
                return Err(TensorError::ClassOutOfRange { class: t, classes: c });
            }
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[t];
            for (p, v) in probs.row_mut(k).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let value = Matrix::scalar(loss / rows.len() as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                rows,
                targets,
                probs,
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    /// Reverse-mode accumulation from a scalar `loss`. Debug builds reject
    /// non-finite values and gradients with [`TensorError::NonFinite`].
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if cfg!(debug_assertions) {
            if let Some(i) = self.nodes[..=loss.0].iter().position(|n| !n.value.is_finite()) {
                return Err(TensorError::NonFinite("value", i));
            }
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if cfg!(debug_assertions) {
            if let Some(i) = grads.iter().position(|g| g.as_ref().is_some_and(|g| !g.is_finite())) {
                return Err(TensorError::NonFinite("gradient", i));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                matmul_a_bt_into(g, bv, &mut da);
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                matmul_at_b_into(av, g, &mut db);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRowBias(a, bias) => {
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*a, g.clone());
                acc(*bias, db);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = zip_map(g, bv, |x, y| x * y);
                let db = zip_map(g, av, |x, y| x * y);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Tanh(a) => acc(*a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
            Op::Gelu(a) => {
                let input = self.value(*a);
                acc(*a, zip_map(g, input, |x, y| x * gelu_derivative(y)));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Matrix::zeros(rows, cols);
                da.data[start * cols..start * cols + g.data.len()].copy_from_slice(g.data());
                acc(*a, da);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                acc(*a, Matrix::from_vec(rows, cols, vec![g.item(); rows * cols]));
            }
            Op::PairGate {
                left,
                right,
                bias,
                pairs,
                tau,
            } => {
                let n = self.shape(*left).0;
                let mut dl = Matrix::zeros(n, 1);
                let mut dr = Matrix::zeros(n, 1);
                let mut db = 0.0;
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let alpha = out.data[k];
                    let dz = g.data[k] * (1.0 - alpha * alpha) / tau;
                    dl.data[i] += dz;
                    dr.data[j] += dz;
                    db += dz;
                }
                acc(*left, dl);
                acc(*right, dr);
                acc(*bias, Matrix::scalar(db));
            }
            Op::GatherScatter { h, gates, messages } => {
                let (hv, gv) = (self.value(*h), self.value(*gates));
                let m = hv.cols();
                let mut dh = Matrix::zeros(hv.rows(), m);
                let mut dg = Matrix::zeros(gv.rows(), 1);
                for msg in messages.iter() {
                    let upstream = &g.data[msg.target * m..(msg.target + 1) * m];
                    let src = &hv.data[msg.source * m..(msg.source + 1) * m];
                    dg.data[msg.gate] += msg.coef * dot(upstream, src);
                    let w = msg.coef * gv.data[msg.gate];
                    let dst = &mut dh.data[msg.source * m..(msg.source + 1) * m];
                    for (d, u) in dst.iter_mut().zip(upstream) {
                        *d += w * u;
                    }
                }
                acc(*h, dh);
                acc(*gates, dg);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                rows,
                targets,
                probs,
            } => {
                let (n, c) = self.shape(*logits);
                let scale = g.item() / rows.len() as f64;
                let mut dl = Matrix::zeros(n, c);
                for (k, (&r, &t)) in rows.iter().zip(targets.iter()).enumerate() {
                    let dst = dl.row_mut(r);
                    for (d, p) in dst.iter_mut().zip(probs.row(k)) {
                        *d += scale * p;
                    }
                    dst[t] -= scale;
                }
                acc(*logits, dl);
            }
        }
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}
