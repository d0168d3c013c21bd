//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so parents always have smaller
//! indices than their children and walking the node list backwards is a
//! reverse topological order. [`Tape::backward`] visits each node once and
//! accumulates vector-Jacobian products into the parents' gradients.
//!
//! ```
//! use zsembed_core::numcore::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).data(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::numcore::matrix::{gemm_acc, gemm_nt_acc, gemm_tn_acc, pairwise_sq_dists, Matrix};

/// Guard used when dividing by a column norm.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    SliceRows(NodeId, usize),
    ColumnL2Normalize(NodeId, Vec<f64>),
    PairwiseSqDists(NodeId, NodeId),
    Contractive {
        s: NodeId,
        t: NodeId,
        w1: NodeId,
        w2: NodeId,
    },
}

/// One recorded value with its gradient slot and the rule that produced it.
#[derive(Debug, Clone)]
pub struct TapeNode {
    value: Matrix,
    grad: Matrix,
    op: Op,
    needs_grad: bool,
}

impl TapeNode {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match &self.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::PairwiseSqDists(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::SliceRows(a, _)
            | Op::ColumnL2Normalize(a, _) => vec![*a],
            Op::Contractive { s, t, w1, w2 } => vec![*s, *t, *w1, *w2],
        }
    }
}

/// Append-only computation record.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<TapeNode>,
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

    pub fn node(&self, id: NodeId) -> &TapeNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).item()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(TapeNode {
            value,
            grad,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `x + b` with the single-row `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut v = xv.clone();
        let brow = bv.row(0).to_vec();
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&brow) {
                *o += bb;
            }
        }
        let ng = self.needs(&[x, b]);
        Ok(self.push(v, Op::AddBias(x, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        let ng = self.needs(&[a]);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        let ng = self.needs(&[a]);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let ng = self.needs(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let ng = self.needs(&[a]);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let ng = self.needs(&[a]);
        self.push(v, Op::Square(a), ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let ng = self.needs(&[a]);
        self.push(v, Op::Transpose(a), ng)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(&[a]);
        self.push(v, Op::Sum(a), ng)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(Error::shape("slice_rows", av.shape(), (start, end)));
        }
        let v = av.slice_rows(start, end);
        let ng = self.needs(&[a]);
        Ok(self.push(v, Op::SliceRows(a, start), ng))
    }

    /// `tanh(x·w + b)`.
    pub fn affine_tanh(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let pre = self.affine(x, w, b)?;
        Ok(self.tanh(pre))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Divides every column by `max(‖column‖₂, 1e-12)`.
    pub fn column_l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::shape(
                "column_l2_normalize",
                xv.shape(),
                (1, xv.cols()),
            ));
        }
        let norms: Vec<f64> = xv.column_norms();
        let mut v = xv.clone();
        let denom: Vec<f64> = norms.iter().map(|n| n.max(NORM_EPS)).collect();
        for r in 0..v.rows() {
            for (o, d) in v.row_mut(r).iter_mut().zip(&denom) {
                *o /= d;
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::ColumnL2Normalize(x, norms), ng))
    }

    /// Squared distances between the rows of `a` and the rows of `b`.
    pub fn pairwise_sq_dists(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = pairwise_sq_dists(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::PairwiseSqDists(a, b), ng))
    }

    /// `exp(-kappa · d2)` entrywise.
    pub fn gaussian_kernel(&mut self, d2: NodeId, kappa: f64) -> Result<NodeId> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kernel bandwidth must be positive, got {kappa}"
            )));
        }
        let scaled = self.scale(d2, -kappa);
        Ok(self.exp(scaled))
    }

    /// Mean squared Frobenius norm of per-row Jacobians of a two-layer map.
    ///
    /// For row `i` the Jacobian of `x ↦ f₂(f₁(x·w1 + b1)·w2 + b2)` is
    /// `diag(t_i)·w2ᵀ·diag(s_i)·w1ᵀ`, where `s` and `t` hold the activation
    /// derivatives of the two layers. The value is
    /// `(1/n) Σᵢ Σₖ t_ik² · ‖w1·diag(s_i)·w2[:,k]‖²`, evaluated through the
    /// Gram matrix `w1ᵀw1`, over unordered pairs of hidden units, so the cost
    /// per row is about `d_hidden²·d_code / 2`.
    pub fn contractive_penalty(
        &mut self,
        s: NodeId,
        t: NodeId,
        w1: NodeId,
        w2: NodeId,
    ) -> Result<NodeId> {
        let (sv, tv, w1v, w2v) = (self.value(s), self.value(t), self.value(w1), self.value(w2));
        let (n, d2) = sv.shape();
        let dc = w2v.cols();
        if w1v.cols() != d2 || w2v.rows() != d2 {
            return Err(Error::shape(
                "contractive_penalty",
                w1v.shape(),
                w2v.shape(),
            ));
        }
        if tv.shape() != (n, dc) {
            return Err(Error::shape("contractive_penalty", sv.shape(), tv.shape()));
        }
        let pt = PairTables::new(sv, w1v, w2v)?;
        let q = pt.ss.matmul(&pt.bmat)?;
        let mut total = 0.0;
        for i in 0..n {
            let mut row_total = 0.0;
            for (tk, qk) in tv.row(i).iter().zip(q.row(i)) {
                row_total += tk * tk * qk;
            }
            total += row_total;
        }
        let v = Matrix::scalar(if n == 0 { 0.0 } else { total / n as f64 });
        let ng = self.needs(&[s, t, w1, w2]);
        Ok(self.push(v, Op::Contractive { s, t, w1, w2 }, ng))
    }

    /// Accumulates gradients of the scalar `loss` into every node it depends on.
    ///
    /// Gradients from earlier calls are cleared first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got a {}x{} node",
                shape.0, shape.1
            )));
        }
        for node in &mut self.nodes[..=loss.0] {
            node.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad = Matrix::scalar(1.0);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut self.nodes[idx].grad);
            for (parent, contrib) in self.local_vjp(idx, &g)? {
                self.nodes[parent.0].grad.add_assign(&contrib);
            }
            self.nodes[idx].grad = g;
        }
        Ok(())
    }

    fn local_vjp(&self, idx: usize, g: &Matrix) -> Result<Vec<(NodeId, Matrix)>> {
        let node = &self.nodes[idx];
        let want = |id: &NodeId| self.nodes[id.0].needs_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if want(a) {
                    let mut da = Matrix::zeros(self.value(*a).rows(), self.value(*a).cols());
                    gemm_nt_acc(g, self.value(*b), &mut da);
                    out.push((*a, da));
                }
                if want(b) {
                    let mut db = Matrix::zeros(self.value(*b).rows(), self.value(*b).cols());
                    gemm_tn_acc(self.value(*a), g, &mut db);
                    out.push((*b, db));
                }
            }
            Op::AddBias(x, b) => {
                if want(x) {
                    out.push((*x, g.clone()));
                }
                if want(b) {
                    out.push((*b, Matrix::from_vec(1, g.cols(), g.column_sums())?));
                }
            }
            Op::Add(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.scale(-1.0)));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((*a, g.hadamard(self.value(*b))?));
                }
                if want(b) {
                    out.push((*b, g.hadamard(self.value(*a))?));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.scale(*k))),
            Op::AddScalar(a) => out.push((*a, g.clone())),
            Op::Tanh(a) => out.push((*a, g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y))?)),
            Op::Exp(a) => out.push((*a, g.hadamard(&node.value)?)),
            Op::Square(a) => out.push((*a, g.zip_map(self.value(*a), |gi, x| 2.0 * x * gi)?)),
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                out.push((*a, Matrix::filled(r, c, g.item())));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut da = Matrix::zeros(r, c);
                for i in 0..g.rows() {
                    da.row_mut(start + i).copy_from_slice(g.row(i));
                }
                out.push((*a, da));
            }
            Op::ColumnL2Normalize(a, norms) => {
                out.push((*a, column_normalize_vjp(&node.value, g, norms)));
            }
            Op::PairwiseSqDists(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if want(a) {
                    // dA_i = 2 (Σ_j G_ij) a_i - 2 Σ_j G_ij b_j
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm_acc(g, bv, &mut da);
                    for i in 0..av.rows() {
                        let rs: f64 = g.row(i).iter().sum();
                        let ai = av.row(i);
                        for (d, x) in da.row_mut(i).iter_mut().zip(ai) {
                            *d = 2.0 * (rs * x - *d);
                        }
                    }
                    out.push((*a, da));
                }
                if want(b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm_tn_acc(g, av, &mut db);
                    let cs = g.column_sums();
                    for j in 0..bv.rows() {
                        let bj = bv.row(j);
                        for (d, y) in db.row_mut(j).iter_mut().zip(bj) {
                            *d = 2.0 * (cs[j] * y - *d);
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Contractive { s, t, w1, w2 } => {
                let grads = contractive_vjp(
                    g.item(),
                    self.value(*s),
                    self.value(*t),
                    self.value(*w1),
                    self.value(*w2),
                )?;
                let [ds, dt, dw1, dw2] = grads;
                for (id, d) in [(*s, ds), (*t, dt), (*w1, dw1), (*w2, dw2)] {
                    if want(&id) {
                        out.push((id, d));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn column_normalize_vjp(y: &Matrix, g: &Matrix, norms: &[f64]) -> Matrix {
    let (n, d) = y.shape();
    // per column: (g - y (y·g)) / ‖x‖ when the norm is above the guard,
    // otherwise the map is a plain scaling by 1/eps.
    let mut dots = vec![0.0; d];
    for r in 0..n {
        for ((acc, yv), gv) in dots.iter_mut().zip(y.row(r)).zip(g.row(r)) {
            *acc += yv * gv;
        }
    }
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let (yr, gr) = (y.row(r), g.row(r));
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = if norms[c] > NORM_EPS {
                (gr[c] - yr[c] * dots[c]) / norms[c]
            } else {
                gr[c] / NORM_EPS
            };
        }
    }
    out
}

/// Per-pair tables for the contractive penalty. Pair `p = (a, b)` with
/// `a ≤ b` has multiplicity 1 on the diagonal and 2 off it.
///
/// * `ss[i, p] = s_ia · s_ib`
/// * `bmat[p, k] = mult_p · G_ab · w2_ak · w2_bk`, with `G = w1ᵀw1`
///
/// so that `q_ik = ‖w1·diag(s_i)·w2[:,k]‖² = (ss · bmat)_ik`.
struct PairTables {
    pairs: Vec<(usize, usize)>,
    gram: Matrix,
    ss: Matrix,
    bmat: Matrix,
}

impl PairTables {
    fn new(s: &Matrix, w1: &Matrix, w2: &Matrix) -> Result<Self> {
        let (n, d2) = s.shape();
        let dc = w2.cols();
        let gram = w1.t_matmul(w1)?;
        let pairs: Vec<(usize, usize)> =
            (0..d2).flat_map(|a| (a..d2).map(move |b| (a, b))).collect();
        let mut ss = Matrix::zeros(n, pairs.len());
        for i in 0..n {
            let si = s.row(i);
            for (o, &(a, b)) in ss.row_mut(i).iter_mut().zip(&pairs) {
                *o = si[a] * si[b];
            }
        }
        let mut bmat = Matrix::zeros(pairs.len(), dc);
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let k = if a == b { 1.0 } else { 2.0 } * gram.get(a, b);
            let (wa, wb) = (w2.row(a), w2.row(b));
            for ((o, x), y) in bmat.row_mut(p).iter_mut().zip(wa).zip(wb) {
                *o = k * x * y;
            }
        }
        Ok(PairTables {
            pairs,
            gram,
            ss,
            bmat,
        })
    }
}

fn contractive_vjp(
    upstream: f64,
    s: &Matrix,
    t: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
) -> Result<[Matrix; 4]> {
    let (n, d2) = s.shape();
    let dc = w2.cols();
    let c = if n == 0 { 0.0 } else { upstream / n as f64 };
    let pt = PairTables::new(s, w1, w2)?;
    let q = pt.ss.matmul(&pt.bmat)?;

    // u = c·t², the weight of q in the loss
    let u = t.map(|v| c * v * v);
    let mut dt = Matrix::zeros(n, dc);
    for i in 0..n {
        let (ti, qi) = (t.row(i), q.row(i));
        for (k, d) in dt.row_mut(i).iter_mut().enumerate() {
            *d = 2.0 * c * ti[k] * qi[k];
        }
    }

    let dss = u.matmul(&pt.bmat.transpose())?;
    let mut ds = Matrix::zeros(n, d2);
    for i in 0..n {
        let (si, gi) = (s.row(i).to_vec(), dss.row(i).to_vec());
        let dsi = ds.row_mut(i);
        for (&(a, b), g) in pt.pairs.iter().zip(&gi) {
            if a == b {
                dsi[a] += 2.0 * g * si[a];
            } else {
                dsi[a] += g * si[b];
                dsi[b] += g * si[a];
            }
        }
    }

    let dbmat = pt.ss.t_matmul(&u)?;
    let mut h = Matrix::zeros(d2, d2);
    let mut dw2 = Matrix::zeros(d2, dc);
    for (p, &(a, b)) in pt.pairs.iter().enumerate() {
        let mult = if a == b { 1.0 } else { 2.0 };
        let (wa, wb) = (w2.row(a).to_vec(), w2.row(b).to_vec());
        let dp = dbmat.row(p);
        let gab = mult * pt.gram.get(a, b);
        let mut hp = 0.0;
        for k in 0..dc {
            hp += dp[k] * wa[k] * wb[k];
        }
        hp *= mult;
        if a == b {
            h.set(a, a, 2.0 * hp);
            let row = dw2.row_mut(a);
            for k in 0..dc {
                row[k] += 2.0 * gab * dp[k] * wa[k];
            }
        } else {
            h.set(a, b, hp);
            h.set(b, a, hp);
            for k in 0..dc {
                let e = gab * dp[k];
                dw2.data_mut()[a * dc + k] += e * wb[k];
                dw2.data_mut()[b * dc + k] += e * wa[k];
            }
        }
    }
    let dw1 = w1.matmul(&h)?;
    Ok([ds, dt, dw1, dw2])
}
