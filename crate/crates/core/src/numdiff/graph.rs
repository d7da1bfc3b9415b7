//! Define-by-run computation record.
//!
//! Every op evaluates eagerly and appends a node; node ids are handed out in
//! creation order, so the node list is already topologically sorted and one
//! reverse sweep computes all gradients.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogFloor(Var, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
    GroupMax(Var, Vec<usize>),
    RowNormalize(Var, Vec<f64>),
    PickPerRow(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MinAll(Var, usize),
    SoftMin(Var, f64),
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    /// Inference graph: dropout disabled.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training graph with dropout masks drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a registry parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_nt_into(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::matrix(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `a[m,n] + row[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let n = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + tr.data()[i % n]).collect();
        let t = Tensor::matrix(ta.rows(), n, data);
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    /// `a[m,n] * col[m,1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta, tc));
        }
        let n = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x * tc.data()[i / n]).collect();
        let t = Tensor::matrix(ta.rows(), n, data);
        Ok(self.push(t, Op::MulCol(a, col)))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| scale * x + shift).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), data);
        self.push(t, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let t = self.map(a, |x| x.max(floor).ln());
        self.push(t, Op::LogFloor(a, floor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_finite() {
            // -inf is a legitimate mask value; NaN and +inf are not.
            if ta.data().iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::Numeric("softmax_rows"));
            }
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        if out.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax_rows"));
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with affine `gain`/`bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.shape() != [1, n] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.shape() != [1, n] {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; tx.rows()];
        let mut out = vec![0.0; tx.len()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let t = Tensor::matrix(tx.rows(), n, out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let m = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != m {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(m, total, out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let n = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            out.extend_from_slice(t.data());
            rows += t.rows();
        }
        Ok(self.push(Tensor::matrix(rows, n, out), Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(Error::Index {
                what: "slice_cols",
                index: end,
                len: ta.cols(),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(ta.rows() * w);
        for r in 0..ta.rows() {
            out.extend_from_slice(&ta.row(r)[start..end]);
        }
        let t = Tensor::matrix(ta.rows(), w, out);
        Ok(self.push(t, Op::SliceCols(a, start)))
    }

    /// Row gather (embedding lookup); backward scatter-adds into `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        let n = tt.cols();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= tt.rows() {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: id,
                    len: tt.rows(),
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::matrix(ids.len(), n, out);
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec())))
    }

    /// `out[:, targets[j]] += a[:, j]`, producing `width` columns.
    pub fn scatter_cols(&mut self, a: Var, targets: &[usize], width: usize) -> Result<Var> {
        let ta = self.value(a);
        if targets.len() != ta.cols() {
            return Err(Error::Shape {
                op: "scatter_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::Index {
                what: "scatter_cols",
                index: bad,
                len: width,
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * width];
        for r in 0..m {
            for (j, &t) in targets.iter().enumerate() {
                out[r * width + t] += ta.data()[r * n + j];
            }
        }
        Ok(self.push(Tensor::matrix(m, width, out), Op::ScatterCols(a, targets.to_vec())))
    }

    /// Per-row maximum over each column group. Ties go to the lowest column;
    /// the gradient flows to that column only.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(Error::contract("group_max needs non-empty groups"));
        }
        let mut argmax = Vec::with_capacity(m * groups.len());
        let mut out = Vec::with_capacity(m * groups.len());
        for r in 0..m {
            let row = ta.row(r);
            for g in groups {
                let mut best = g[0];
                for &c in g {
                    if c >= n {
                        return Err(Error::Index {
                            what: "group_max",
                            index: c,
                            len: n,
                        });
                    }
                    if row[c] > row[best] || (row[c] == row[best] && c < best) {
                        best = c;
                    }
                }
                argmax.push(best);
                out.push(row[best]);
            }
        }
        let t = Tensor::matrix(m, groups.len(), out);
        Ok(self.push(t, Op::GroupMax(a, argmax)))
    }

    /// Divides each row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut out = ta.clone();
        let mut sums = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let s: f64 = ta.row(r).iter().sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::Numeric("row_normalize"));
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= s);
            sums.push(s);
        }
        Ok(self.push(out, Op::RowNormalize(a, sums)))
    }

    /// `out[r] = a[r, idx[r]]`, shape `[m, 1]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if idx.len() != ta.rows() {
            return Err(Error::Shape {
                op: "pick_per_row",
                lhs: ta.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= ta.cols() {
                return Err(Error::Index {
                    what: "pick_per_row",
                    index: c,
                    len: ta.cols(),
                });
            }
            out.push(ta.get(r, c));
        }
        let t = Tensor::matrix(idx.len(), 1, out);
        Ok(self.push(t, Op::PickPerRow(a, idx.to_vec())))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if cols.is_empty() {
            return Err(Error::contract("select_cols with no columns"));
        }
        let mut out = Vec::with_capacity(ta.rows() * cols.len());
        for r in 0..ta.rows() {
            for &c in cols {
                if c >= ta.cols() {
                    return Err(Error::Index {
                        what: "select_cols",
                        index: c,
                        len: ta.cols(),
                    });
                }
                out.push(ta.get(r, c));
            }
        }
        let t = Tensor::matrix(ta.rows(), cols.len(), out);
        Ok(self.push(t, Op::SelectCols(a, cols.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Minimum over all entries (row-major; first minimum wins). Returns the
    /// scalar node and the flat position of the selected entry.
    pub fn min_all(&mut self, a: Var) -> (Var, usize) {
        let t = self.value(a);
        let mut best = 0;
        for (i, &v) in t.data().iter().enumerate() {
            if v < t.data()[best] {
                best = i;
            }
        }
        let v = t.data()[best];
        (self.push(Tensor::scalar(v), Op::MinAll(a, best)), best)
    }

    /// `-τ · ln Σ exp(-a/τ)`, a smooth lower bound of `min`.
    pub fn soft_min(&mut self, a: Var, temperature: f64) -> Var {
        let t = self.value(a);
        let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let s: f64 = t.data().iter().map(|&x| (-(x - lo) / temperature).exp()).sum();
        let v = lo - temperature * s.ln();
        self.push(Tensor::scalar(v), Op::SoftMin(a, temperature))
    }

    /// Inverted dropout; identity on inference graphs or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols(), data);
        self.push(t, Op::Dropout(a, mask))
    }

    /// `-ln max(p[r, gold[r]], floor)` per row, shape `[m, 1]`.
    pub fn neg_log_prob(&mut self, probs: Var, gold: &[usize], floor: f64) -> Result<Var> {
        let picked = self.pick_per_row(probs, gold)?;
        let logp = self.log_floor(picked, floor);
        Ok(self.scale(logp, -1.0))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into parameter
    /// gradients of `store` (frozen parameters are skipped).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node (None if unreachable).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G·Bᵀ, dB = Aᵀ·G
                matmul_nt_into(g, tb.data(), slot(grads, *a, m * k), m, n, k);
                matmul_tn_into(ta.data(), g, slot(grads, *b, k * n), k, m, n);
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                matmul_into(g, tb.data(), slot(grads, *a, m * k), m, n, k);
                matmul_tn_into(g, ta.data(), slot(grads, *b, n * k), n, m, k);
            }
            Op::Transpose(a) => {
                let (m, n) = (out.rows(), out.cols());
                let d = slot(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        d[c * m + r] += g[r * n + c];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let d = slot(grads, *b, g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
            Op::AddRow(a, row) => {
                add_into(slot(grads, *a, g.len()), g);
                let n = out.cols();
                let d = slot(grads, *row, n);
                for (j, gv) in g.iter().enumerate() {
                    d[j % n] += gv;
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let da = slot(grads, *a, g.len());
                for ((d, gv), y) in da.iter_mut().zip(g).zip(tb.data()) {
                    *d += gv * y;
                }
                let db = slot(grads, *b, g.len());
                for ((d, gv), x) in db.iter_mut().zip(g).zip(ta.data()) {
                    *d += gv * x;
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(a), val(col));
                let n = out.cols();
                let da = slot(grads, *a, g.len());
                for (j, (d, gv)) in da.iter_mut().zip(g).enumerate() {
                    *d += gv * tc.data()[j / n];
                }
                let dc = slot(grads, *col, tc.len());
                for (j, (gv, x)) in g.iter().zip(ta.data()).enumerate() {
                    dc[j / n] += gv * x;
                }
            }
            Op::Affine(a, s) => {
                let d = slot(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
            }
            Op::Relu(a) => {
                let ta = val(a);
                let d = slot(grads, *a, g.len());
                for ((d, gv), x) in d.iter_mut().zip(g).zip(ta.data()) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let d = slot(grads, *a, g.len());
                for ((d, gv), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let d = slot(grads, *a, g.len());
                for ((d, gv), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::LogFloor(a, floor) => {
                let ta = val(a);
                let d = slot(grads, *a, g.len());
                for ((d, gv), x) in d.iter_mut().zip(g).zip(ta.data()) {
                    if *x > *floor {
                        *d += gv / x;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let d = slot(grads, *a, g.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..n {
                        d[r * n + c] += y[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = out.cols();
                let m = out.rows();
                let tg = val(gain);
                {
                    let dg = slot(grads, *gain, n);
                    for (j, gv) in g.iter().enumerate() {
                        dg[j % n] += gv * xhat[j];
                    }
                }
                {
                    let db = slot(grads, *bias, n);
                    for (j, gv) in g.iter().enumerate() {
                        db[j % n] += gv;
                    }
                }
                let dx = slot(grads, *x, m * n);
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        dxhat[c] = g[r * n + c] * tg.data()[c];
                    }
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        dx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    let d = slot(grads, *p, out.rows() * w);
                    for r in 0..out.rows() {
                        for c in 0..w {
                            d[r * w + c] += g[r * total + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(p).len();
                    add_into(slot(grads, *p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(a);
                let (w, n) = (out.cols(), ta.cols());
                let d = slot(grads, *a, ta.len());
                for r in 0..out.rows() {
                    for c in 0..w {
                        d[r * n + start + c] += g[r * w + c];
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let tt = val(table);
                let n = tt.cols();
                let d = slot(grads, *table, tt.len());
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::ScatterCols(a, targets) => {
                let ta = val(a);
                let (m, n, w) = (ta.rows(), ta.cols(), out.cols());
                let d = slot(grads, *a, m * n);
                for r in 0..m {
                    for (j, &t) in targets.iter().enumerate() {
                        d[r * n + j] += g[r * w + t];
                    }
                }
            }
            Op::GroupMax(a, argmax) => {
                let ta = val(a);
                let (n, k) = (ta.cols(), out.cols());
                let d = slot(grads, *a, ta.len());
                for (j, (&src, gv)) in argmax.iter().zip(g).enumerate() {
                    d[(j / k) * n + src] += gv;
                }
            }
            Op::RowNormalize(a, sums) => {
                let n = out.cols();
                let d = slot(grads, *a, g.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..n {
                        d[r * n + c] += (gr[c] - dot) / sums[r];
                    }
                }
            }
            Op::PickPerRow(a, idx) => {
                let ta = val(a);
                let n = ta.cols();
                let d = slot(grads, *a, ta.len());
                for (r, &c) in idx.iter().enumerate() {
                    d[r * n + c] += g[r];
                }
            }
            Op::SelectCols(a, cols) => {
                let ta = val(a);
                let (n, k) = (ta.cols(), cols.len());
                let d = slot(grads, *a, ta.len());
                for r in 0..ta.rows() {
                    for (j, &c) in cols.iter().enumerate() {
                        d[r * n + c] += g[r * k + j];
                    }
                }
            }
            Op::Sum(a) => {
                let len = val(a).len();
                slot(grads, *a, len).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(a) => {
                let len = val(a).len();
                let s = g[0] / len as f64;
                slot(grads, *a, len).iter_mut().for_each(|d| *d += s);
            }
            Op::MinAll(a, pos) => {
                let len = val(a).len();
                slot(grads, *a, len)[*pos] += g[0];
            }
            Op::SoftMin(a, temp) => {
                let ta = val(a);
                let lo = ta.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let w: Vec<f64> = ta.data().iter().map(|&x| (-(x - lo) / temp).exp()).collect();
                let s: f64 = w.iter().sum();
                let d = slot(grads, *a, ta.len());
                for (d, wi) in d.iter_mut().zip(&w) {
                    *d += g[0] * wi / s;
                }
            }
            Op::Dropout(a, mask) => {
                let d = slot(grads, *a, g.len());
                for ((d, gv), m) in d.iter_mut().zip(g).zip(mask) {
                    *d += gv * m;
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
