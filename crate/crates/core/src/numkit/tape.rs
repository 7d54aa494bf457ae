//! Tape-based reverse-mode differentiation over matrix operations.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients for every node that
//! depends on a parameter leaf. Constants never receive gradients.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{dot, norm, Matrix};
use super::special::{digamma_pos, sigmoid, softplus, trigamma_pos};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse neighborhoods with per-edge time gaps, consumed by
/// [`Tape::temporal_aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalNeighborhood {
    /// CSR row offsets, length `nodes + 1`.
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// `|t_j - t_i|` for each stored edge `(i, j)`.
    pub gaps: Vec<f64>,
}

impl TemporalNeighborhood {
    pub fn node_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Softplus(Var),
    Digamma(Var),
    LnGamma(Var),
    ClampMin(Var, f64),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    RowNormalize(Var),
    GatherRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    RowMax(Var, Vec<usize>),
    TemporalAggregate {
        values: Var,
        rates: Var,
        graph: Arc<TemporalNeighborhood>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Broadcast layout of the right operand of a binary elementwise op.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn bcast(op: &'static str, a: &Matrix, b: &Matrix) -> Result<Bcast> {
    let (r, c) = a.shape();
    match b.shape() {
        s if s == (r, c) => Ok(Bcast::Same),
        (1, 1) => Ok(Bcast::Scalar),
        (1, bc) if bc == c => Ok(Bcast::Row),
        (br, 1) if br == r => Ok(Bcast::Col),
        s => Err(Error::Shape {
            op,
            detail: format!("cannot broadcast {s:?} onto {:?}", (r, c)),
        }),
    }
}

#[inline]
fn b_index(kind: Bcast, cols: usize, k: usize) -> usize {
    match kind {
        Bcast::Same => k,
        Bcast::Row => k % cols,
        Bcast::Col => k / cols,
        Bcast::Scalar => 0,
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` is not on a
    /// path to the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

#[derive(Debug, Default, Clone)]
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let t = self.tracked(a);
        self.push(value, op, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::MatMul(a, b), t))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::MatMulBt(a, b), t))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = bcast(name, av, bv)?;
        let cols = av.cols();
        let bs = bv.as_slice();
        let data = av
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, bs[b_index(kind, cols, k)]))
            .collect();
        let value = Matrix::from_vec(av.rows(), cols, data)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, t))
    }

    /// Elementwise `a + b`; `b` may be a row, column or scalar broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.unary(a, v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.unary(a, v, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::log);
        self.unary(a, v, Op::Ln(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.unary(a, v, Op::Softplus(a))
    }

    /// Elementwise ψ; every entry must be positive.
    pub fn digamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive("digamma", a)?;
        let v = self.value(a).map(digamma_pos);
        Ok(self.unary(a, v, Op::Digamma(a)))
    }

    /// Elementwise ln Γ; every entry must be positive.
    pub fn ln_gamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive("ln_gamma", a)?;
        let v = self.value(a).map(libm::lgamma);
        Ok(self.unary(a, v, Op::LnGamma(a)))
    }

    fn check_positive(&self, op: &str, a: Var) -> Result<()> {
        match self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            Some(x) => Err(Error::Domain(format!("{op} requires positive entries, got {x}"))),
            None => Ok(()),
        }
    }

    /// `max(a, floor)` with zero gradient on clamped entries.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor));
        self.unary(a, v, Op::ClampMin(a, floor))
    }

    /// Row sums as a column vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::column((0..m.rows()).map(|r| m.row(r).iter().sum()).collect());
        self.unary(a, v, Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len().max(1) as f64);
        self.unary(a, v, Op::Mean(a))
    }

    /// Scales each row to unit L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let v = self.value(a).normalize_rows();
        self.unary(a, v, Op::RowNormalize(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("row {bad} out of {}", m.rows()),
            });
        }
        let v = m.select_rows(indices);
        Ok(self.unary(a, v, Op::GatherRows(a, indices.to_vec())))
    }

    /// Column vector with `a[i, cols[i]]`.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if cols.len() != m.rows() || cols.iter().any(|&c| c >= m.cols()) {
            return Err(Error::Shape {
                op: "pick_per_row",
                detail: format!("{} picks for {:?}", cols.len(), m.shape()),
            });
        }
        let v = Matrix::column(cols.iter().enumerate().map(|(r, &c)| m[(r, c)]).collect());
        Ok(self.unary(a, v, Op::PickPerRow(a, cols.to_vec())))
    }

    /// Row maxima as a column vector; the gradient flows to the first argmax.
    pub fn row_max(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut arg = Vec::with_capacity(m.rows());
        let mut vals = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            let (idx, best) = argmax(m.row(r));
            arg.push(idx);
            vals.push(best);
        }
        self.unary(a, Matrix::column(vals), Op::RowMax(a, arg))
    }

    /// Temporal-decay attention aggregation over sparse neighborhoods.
    ///
    /// For node `i` with decay rate `r_i = rates[i]`, weights are
    /// `softmax_j(-r_i |t_j - t_i|)` over its neighbors and the output row is
    /// `Σ_j a_ij values[j]`.
    pub fn temporal_aggregate(
        &mut self,
        values: Var,
        rates: Var,
        graph: &Arc<TemporalNeighborhood>,
    ) -> Result<Var> {
        let (xv, rv) = (self.value(values), self.value(rates));
        let n = graph.node_count();
        if xv.rows() != n || rv.shape() != (n, 1) {
            return Err(Error::Shape {
                op: "temporal_aggregate",
                detail: format!(
                    "graph has {n} nodes, values {:?}, rates {:?}",
                    xv.shape(),
                    rv.shape()
                ),
            });
        }
        let weights = attention_weights(graph, rv.as_slice());
        let d = xv.cols();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let row = out.row_mut(i);
            for e in graph.range(i) {
                let w = weights[e];
                for (o, &x) in row.iter_mut().zip(xv.row(graph.neighbors[e])) {
                    *o += w * x;
                }
            }
        }
        let t = self.tracked(values) || self.tracked(rates);
        Ok(self.push(
            out,
            Op::TemporalAggregate {
                values,
                rates,
                graph: Arc::clone(graph),
                weights,
            },
            t,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.matmul_bt(self.value(*b))?);
                }
                if self.tracked(*b) {
                    acc(*b, self.value(*a).matmul_at(g)?);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.tracked(*a) {
                    acc(*a, g.matmul(self.value(*b))?);
                }
                if self.tracked(*b) {
                    acc(*b, g.matmul_at(self.value(*a))?);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.tracked(*a) {
                    acc(*a, g.clone());
                }
                if self.tracked(*b) {
                    acc(*b, self.reduce_to(*b, g, |_, gv| sign * gv));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let kind = bcast("mul", av, bv)?;
                if self.tracked(*a) {
                    let bs = bv.as_slice();
                    let cols = av.cols();
                    let data = g
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv * bs[b_index(kind, cols, k)])
                        .collect();
                    acc(*a, Matrix::from_vec(g.rows(), g.cols(), data)?);
                }
                if self.tracked(*b) {
                    let as_ = av.as_slice();
                    acc(*b, self.reduce_to(*b, g, |k, gv| gv * as_[k]));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let kind = bcast("div", av, bv)?;
                let bs = bv.as_slice();
                let cols = av.cols();
                if self.tracked(*a) {
                    let data = g
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv / bs[b_index(kind, cols, k)])
                        .collect();
                    acc(*a, Matrix::from_vec(g.rows(), g.cols(), data)?);
                }
                if self.tracked(*b) {
                    // d(a/b)/db = -out / b
                    let os = out.as_slice();
                    acc(
                        *b,
                        self.reduce_to(*b, g, |k, gv| -gv * os[k] / bs[b_index(kind, cols, k)]),
                    );
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Recip(a) => acc(*a, g.zip_map(out, |gv, o| -gv * o * o)),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x)),
            Op::Exp(a) => acc(*a, g.zip_map(out, |gv, o| gv * o)),
            Op::Ln(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv / x)),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            ),
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))),
            Op::Digamma(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * trigamma_pos(x))),
            Op::LnGamma(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * digamma_pos(x))),
            Op::ClampMin(a, floor) => acc(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > *floor { gv } else { 0.0 }),
            ),
            Op::SumRows(a) => {
                let av = self.value(*a);
                let cols = av.cols();
                let gs = g.as_slice();
                let data = (0..av.len()).map(|k| gs[k / cols]).collect();
                acc(*a, Matrix::from_vec(av.rows(), cols, data)?);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.as_slice()[0] / (r * c).max(1) as f64));
            }
            Op::RowNormalize(a) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let n = norm(av.row(r));
                    if n == 0.0 {
                        continue;
                    }
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj = dot(y, gr);
                    for ((dv, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *dv = (gv - yv * proj) / n;
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (dv, &gv) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dv += gv;
                    }
                }
                acc(*a, d);
            }
            Op::PickPerRow(a, cols) | Op::RowMax(a, cols) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for (r, &c) in cols.iter().enumerate() {
                    d[(r, c)] = g.as_slice()[r];
                }
                acc(*a, d);
            }
            Op::TemporalAggregate {
                values,
                rates,
                graph,
                weights,
            } => {
                let xv = self.value(*values);
                let n = graph.node_count();
                let mut dx = self.tracked(*values).then(|| Matrix::zeros(n, xv.cols()));
                let mut dr = Matrix::zeros(n, 1);
                let mut dw = Vec::new();
                for i in 0..n {
                    let range = graph.range(i);
                    let gi = g.row(i);
                    if let Some(dx) = dx.as_mut() {
                        for e in range.clone() {
                            let w = weights[e];
                            for (o, &gv) in dx.row_mut(graph.neighbors[e]).iter_mut().zip(gi) {
                                *o += w * gv;
                            }
                        }
                    }
                    // softmax backward into the logits -r_i * gap_ij
                    dw.clear();
                    dw.extend(range.clone().map(|e| dot(gi, xv.row(graph.neighbors[e]))));
                    let mean: f64 = range.clone().zip(&dw).map(|(e, &d)| weights[e] * d).sum();
                    dr[(i, 0)] = range
                        .zip(&dw)
                        .map(|(e, &d)| -weights[e] * (d - mean) * graph.gaps[e])
                        .sum();
                }
                if let Some(dx) = dx {
                    acc(*values, dx);
                }
                if self.tracked(*rates) {
                    acc(*rates, dr);
                }
            }
        }
        Ok(())
    }

    /// Reduces an output-shaped gradient onto the (possibly broadcast) shape
    /// of `b`, mapping each entry through `f(k, g_k)` first.
    fn reduce_to(&self, b: Var, g: &Matrix, f: impl Fn(usize, f64) -> f64) -> Matrix {
        let bv = self.value(b);
        let cols = g.cols();
        let kind = if bv.shape() == g.shape() {
            Bcast::Same
        } else if bv.shape() == (1, 1) {
            Bcast::Scalar
        } else if bv.rows() == 1 {
            Bcast::Row
        } else {
            Bcast::Col
        };
        let mut out = Matrix::zeros(bv.rows(), bv.cols());
        let os = out.as_mut_slice();
        for (k, &gv) in g.as_slice().iter().enumerate() {
            os[b_index(kind, cols, k)] += f(k, gv);
        }
        out
    }
}

/// Index and value of the first maximum.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Per-edge softmax weights `softmax_j(-rate_i * gap_ij)` for every node.
pub fn attention_weights(graph: &TemporalNeighborhood, rates: &[f64]) -> Vec<f64> {
    let mut weights = vec![0.0; graph.neighbors.len()];
    for (i, &rate) in rates.iter().enumerate().take(graph.node_count()) {
        let range = graph.range(i);
        let logits = range.clone().map(|e| -rate * graph.gaps[e]);
        let top = logits.fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for e in range.clone() {
            let w = libm::exp(-rate * graph.gaps[e] - top);
            weights[e] = w;
            total += w;
        }
        for e in range {
            weights[e] /= total;
        }
    }
    weights
}
