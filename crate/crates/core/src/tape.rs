//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! The model's forward pass records every operation on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar root walks the recording in reverse and
//! accumulates exact gradients for every node. The op set is deliberately
//! small: just what the forward computation and the ranking loss need.
//!
//! Determinism notes: node ids are creation-ordered, ops may only reference
//! earlier nodes, and backward visits nodes in strictly descending id order,
//! so gradient accumulation order is fixed. Sparse products go through
//! [`CsrMatrix::spmm`], which sums each row over ascending column indices.

use std::sync::Arc;

use crate::dense::{dot, matmul, matmul_abt, matmul_atb, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;

pub type NodeId = usize;

/// A sparse matrix paired with its transpose, so the backward pass never
/// re-transposes inside the training loop. Build once per graph refresh.
#[derive(Clone)]
pub struct SparseOperator {
    pub mat: Arc<CsrMatrix>,
    pub mat_t: Arc<CsrMatrix>,
}

impl SparseOperator {
    pub fn new(mat: CsrMatrix) -> Self {
        let mat_t = mat.transpose();
        Self {
            mat: Arc::new(mat),
            mat_t: Arc::new(mat_t),
        }
    }

    /// For structurally symmetric matrices the transpose is the matrix
    /// itself; share one allocation.
    pub fn symmetric(mat: CsrMatrix) -> Self {
        let mat = Arc::new(mat);
        Self {
            mat_t: mat.clone(),
            mat,
        }
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// mul * x + add, elementwise. The shift has no gradient, so only the
    /// factor is kept.
    Affine {
        x: NodeId,
        mul: f64,
    },
    MatMul(NodeId, NodeId),
    Spmm {
        op: SparseOperator,
        x: NodeId,
    },
    /// Broadcast a 1 x d bias over every row of x.
    AddRowBias {
        x: NodeId,
        bias: NodeId,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    /// Elementwise sqrt(|0.5 (x^2 + y^2) + eps|). x and y may be the same node.
    Refine {
        x: NodeId,
        y: NodeId,
        eps: f64,
    },
    /// Rowwise (cos(p_row, r_row) + eps) * p_row, with cos = 0 when either
    /// row has zero norm. Gradient flows through both p and r.
    CosGate {
        p: NodeId,
        r: NodeId,
        eps: f64,
    },
    ConcatRows(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Elementwise sum of same-shape nodes.
    SumList(Vec<NodeId>),
    /// n x m -> n x 1 row sums.
    RowSum(NodeId),
    /// Rowwise softmax.
    SoftmaxRows(NodeId),
    /// x * s.data[idx]: scale a whole matrix by one entry of another node.
    ScaleByEntry {
        x: NodeId,
        s: NodeId,
        idx: usize,
    },
    /// Per triplet (u, p, n): <e_u, e_{off+p}> - <e_u, e_{off+n}>, giving a
    /// B x 1 column of ranking gaps. Item rows live at offset n_users.
    PairGaps {
        e: NodeId,
        triplets: Arc<Vec<(usize, usize, usize)>>,
        n_users: usize,
    },
    /// Scalar sum over a column of gaps of -log sigmoid(g), computed as
    /// softplus(-g) for stability.
    NegLogSigmoidSum(NodeId),
    /// Scalar sum of squared L2 norms of the listed rows (callers dedup).
    SqNormRows {
        x: NodeId,
        rows: Arc<Vec<usize>>,
    },
    /// Scalar squared Frobenius norm.
    SqNormFull(NodeId),
}

struct Node {
    op: Op,
    value: DenseMatrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by node id, produced by [`Tape::backward`]. Nodes the
/// loss does not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<DenseMatrix> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
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

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.shape()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = DenseMatrix::from_vec(
            self.shape(a).0,
            self.shape(a).1,
            self.nodes[a]
                .value
                .as_slice()
                .iter()
                .zip(self.nodes[b].value.as_slice())
                .map(|(x, y)| x + y)
                .collect(),
        );
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = DenseMatrix::from_vec(
            self.shape(a).0,
            self.shape(a).1,
            self.nodes[a]
                .value
                .as_slice()
                .iter()
                .zip(self.nodes[b].value.as_slice())
                .map(|(x, y)| x - y)
                .collect(),
        );
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = DenseMatrix::from_vec(
            self.shape(a).0,
            self.shape(a).1,
            self.nodes[a]
                .value
                .as_slice()
                .iter()
                .zip(self.nodes[b].value.as_slice())
                .map(|(x, y)| x * y)
                .collect(),
        );
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.nodes[x].value.map(|e| mul * e + add);
        self.push(Op::Affine { x, mul }, v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(Error::DimMismatch(format!(
                "matmul: {:?} times {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value);
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn spmm(&mut self, op: &SparseOperator, x: NodeId) -> Result<NodeId> {
        let v = op.mat.spmm(&self.nodes[x].value)?;
        Ok(self.push(Op::Spmm { op: op.clone(), x }, v))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, d) = self.shape(x);
        if self.shape(bias) != (1, d) {
            return Err(Error::DimMismatch(format!(
                "row bias {:?} against {:?}",
                self.shape(bias),
                (n, d)
            )));
        }
        let mut v = self.nodes[x].value.clone();
        let b = self.nodes[bias].value.row(0).to_vec();
        for r in 0..n {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        Ok(self.push(Op::AddRowBias { x, bias }, v))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[x].value.map(|e| if e > 0.0 { e } else { slope * e });
        self.push(Op::LeakyRelu { x, slope }, v)
    }

    pub fn refine(&mut self, x: NodeId, y: NodeId, eps: f64) -> Result<NodeId> {
        self.same_shape(x, y, "refine")?;
        let (n, d) = self.shape(x);
        let v = DenseMatrix::from_vec(
            n,
            d,
            self.nodes[x]
                .value
                .as_slice()
                .iter()
                .zip(self.nodes[y].value.as_slice())
                .map(|(a, b)| (0.5 * (a * a + b * b) + eps).abs().sqrt())
                .collect(),
        );
        Ok(self.push(Op::Refine { x, y, eps }, v))
    }

    pub fn cos_gate(&mut self, p: NodeId, r: NodeId, eps: f64) -> Result<NodeId> {
        self.same_shape(p, r, "cos gate")?;
        let (n, d) = self.shape(p);
        let mut v = DenseMatrix::zeros(n, d);
        for row in 0..n {
            let pr = self.nodes[p].value.row(row);
            let rr = self.nodes[r].value.row(row);
            let c = crate::dense::cosine(pr, rr);
            for (o, &pv) in v.row_mut(row).iter_mut().zip(pr) {
                *o = (c + eps) * pv;
            }
        }
        Ok(self.push(Op::CosGate { p, r, eps }, v))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_rows of nothing".into()));
        }
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            if self.shape(p).1 != cols {
                return Err(Error::DimMismatch("concat_rows column mismatch".into()));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.nodes[p].value.as_slice());
        }
        let v = DenseMatrix::from_vec(rows, cols, data);
        Ok(self.push(Op::ConcatRows(parts), v))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        if end > self.shape(x).0 || start > end {
            return Err(Error::IndexOutOfRange(format!(
                "slice {start}..{end} of {} rows",
                self.shape(x).0
            )));
        }
        let v = self.nodes[x].value.slice_rows(start, end);
        Ok(self.push(Op::SliceRows { x, start }, v))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols of nothing".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in &parts {
            if self.shape(p).0 != rows {
                return Err(Error::DimMismatch("concat_cols row mismatch".into()));
            }
            widths.push(self.shape(p).1);
        }
        let total: usize = widths.iter().sum();
        let mut v = DenseMatrix::zeros(rows, total);
        for r in 0..rows {
            let out = v.row_mut(r);
            let mut at = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[at..at + w].copy_from_slice(self.nodes[p].value.row(r));
                at += w;
            }
        }
        Ok(self.push(Op::ConcatCols(parts), v))
    }

    pub fn sum_list(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("sum_list of nothing".into()));
        }
        for &p in &parts[1..] {
            self.same_shape(parts[0], p, "sum_list")?;
        }
        let mut v = self.nodes[parts[0]].value.clone();
        for &p in &parts[1..] {
            for (o, x) in v.as_mut_slice().iter_mut().zip(self.nodes[p].value.as_slice()) {
                *o += x;
            }
        }
        Ok(self.push(Op::SumList(parts), v))
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let (n, _) = self.shape(x);
        let v = DenseMatrix::from_vec(
            n,
            1,
            (0..n).map(|r| self.nodes[x].value.row(r).iter().sum()).collect(),
        );
        self.push(Op::RowSum(x), v)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (n, d) = self.shape(x);
        let mut v = DenseMatrix::zeros(n, d);
        for r in 0..n {
            let row = self.nodes[x].value.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = v.row_mut(r);
            let mut z = 0.0;
            for (o, &e) in out.iter_mut().zip(row) {
                *o = (e - m).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        self.push(Op::SoftmaxRows(x), v)
    }

    pub fn scale_by_entry(&mut self, x: NodeId, s: NodeId, idx: usize) -> Result<NodeId> {
        if idx >= self.nodes[s].value.len() {
            return Err(Error::IndexOutOfRange(format!(
                "entry {idx} of a node with {} values",
                self.nodes[s].value.len()
            )));
        }
        let sv = self.nodes[s].value.as_slice()[idx];
        let v = self.nodes[x].value.map(|e| e * sv);
        Ok(self.push(Op::ScaleByEntry { x, s, idx }, v))
    }

    pub fn pair_gaps(
        &mut self,
        e: NodeId,
        triplets: Arc<Vec<(usize, usize, usize)>>,
        n_users: usize,
    ) -> Result<NodeId> {
        let (n, _) = self.shape(e);
        let mut v = DenseMatrix::zeros(triplets.len(), 1);
        for (b, &(u, p, ng)) in triplets.iter().enumerate() {
            let (ip, ineg) = (n_users + p, n_users + ng);
            if u >= n_users || ip >= n || ineg >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet ({u},{p},{ng}) outside embedding of {n} rows"
                )));
            }
            let eu = self.nodes[e].value.row(u);
            let gap = dot(eu, self.nodes[e].value.row(ip)) - dot(eu, self.nodes[e].value.row(ineg));
            v.set(b, 0, gap);
        }
        Ok(self.push(Op::PairGaps { e, triplets, n_users }, v))
    }

    pub fn neg_log_sigmoid_sum(&mut self, g: NodeId) -> Result<NodeId> {
        if self.shape(g).1 != 1 {
            return Err(Error::DimMismatch("expected a column of gaps".into()));
        }
        let total: f64 = self.nodes[g].value.as_slice().iter().map(|&z| softplus(-z)).sum();
        let v = DenseMatrix::from_vec(1, 1, vec![total]);
        Ok(self.push(Op::NegLogSigmoidSum(g), v))
    }

    pub fn sq_norm_rows(&mut self, x: NodeId, rows: Arc<Vec<usize>>) -> Result<NodeId> {
        let n = self.shape(x).0;
        let mut total = 0.0;
        for &r in rows.iter() {
            if r >= n {
                return Err(Error::IndexOutOfRange(format!("row {r} of {n}")));
            }
            total += self.nodes[x].value.row(r).iter().map(|e| e * e).sum::<f64>();
        }
        let v = DenseMatrix::from_vec(1, 1, vec![total]);
        Ok(self.push(Op::SqNormRows { x, rows }, v))
    }

    pub fn sq_norm_full(&mut self, x: NodeId) -> NodeId {
        let v = DenseMatrix::from_vec(1, 1, vec![self.nodes[x].value.frobenius_sq()]);
        self.push(Op::SqNormFull(x), v)
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::DimMismatch(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(DenseMatrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    // park the gradient back for harvesting
                    grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &self.nodes[*a].value, |ga| add_assign(ga, &g));
                    acc(&mut grads, *b, &self.nodes[*b].value, |gb| add_assign(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &self.nodes[*a].value, |ga| add_assign(ga, &g));
                    acc(&mut grads, *b, &self.nodes[*b].value, |gb| sub_assign(gb, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(&mut grads, *a, av, |ga| {
                        for ((o, gg), x) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(bv.as_slice()) {
                            *o += gg * x;
                        }
                    });
                    acc(&mut grads, *b, bv, |gb| {
                        for ((o, gg), x) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(av.as_slice()) {
                            *o += gg * x;
                        }
                    });
                }
                Op::Affine { x, mul } => {
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| {
                        for (o, gg) in gx.as_mut_slice().iter_mut().zip(g.as_slice()) {
                            *o += mul * gg;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let da = matmul_abt(&g, &self.nodes[*b].value);
                    let db = matmul_atb(&self.nodes[*a].value, &g);
                    acc(&mut grads, *a, &self.nodes[*a].value, |ga| add_assign(ga, &da));
                    acc(&mut grads, *b, &self.nodes[*b].value, |gb| add_assign(gb, &db));
                }
                Op::Spmm { op, x } => {
                    let dx = op.mat_t.spmm(&g)?;
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| add_assign(gx, &dx));
                }
                Op::AddRowBias { x, bias } => {
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| add_assign(gx, &g));
                    acc(&mut grads, *bias, &self.nodes[*bias].value, |gb| {
                        let out = gb.row_mut(0);
                        for r in 0..g.rows() {
                            for (o, gg) in out.iter_mut().zip(g.row(r)) {
                                *o += gg;
                            }
                        }
                    });
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads, *x, xv, |gx| {
                        for ((o, gg), &e) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(xv.as_slice()) {
                            *o += gg * if e > 0.0 { 1.0 } else { *slope };
                        }
                    });
                }
                Op::Refine { x, y, eps } => {
                    let (xv, yv) = (&self.nodes[*x].value, &self.nodes[*y].value);
                    let out = &self.nodes[id].value;
                    // d sqrt(|h|)/dh = sign(h) / (2 sqrt(|h|)); h = 0.5(x^2+y^2)+eps
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    let mut dy = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.len() {
                        let (a, b) = (xv.as_slice()[i], yv.as_slice()[i]);
                        let h = 0.5 * (a * a + b * b) + eps;
                        let o = out.as_slice()[i];
                        if o == 0.0 {
                            continue;
                        }
                        let s = if h >= 0.0 { 1.0 } else { -1.0 };
                        let gg = g.as_slice()[i] * s / (2.0 * o);
                        dx.as_mut_slice()[i] = gg * a;
                        dy.as_mut_slice()[i] = gg * b;
                    }
                    acc(&mut grads, *x, xv, |gx| add_assign(gx, &dx));
                    acc(&mut grads, *y, yv, |gy| add_assign(gy, &dy));
                }
                Op::CosGate { p, r, eps } => {
                    let (pv, rv) = (&self.nodes[*p].value, &self.nodes[*r].value);
                    let (n, d) = pv.shape();
                    let mut dp = DenseMatrix::zeros(n, d);
                    let mut dr = DenseMatrix::zeros(n, d);
                    for row in 0..n {
                        let (pr, rr, gr) = (pv.row(row), rv.row(row), g.row(row));
                        let (np, nr) = (norm(pr), norm(rr));
                        if np == 0.0 || nr == 0.0 {
                            // cos pinned to 0: out = eps * p
                            for (o, &gg) in dp.row_mut(row).iter_mut().zip(gr) {
                                *o += eps * gg;
                            }
                            continue;
                        }
                        let c = dot(pr, rr) / (np * nr);
                        let s = dot(gr, pr);
                        let dpo = dp.row_mut(row);
                        for j in 0..d {
                            dpo[j] += (c + eps) * gr[j] + s * (rr[j] / (np * nr) - c * pr[j] / (np * np));
                        }
                        let dro = dr.row_mut(row);
                        for j in 0..d {
                            dro[j] += s * (pr[j] / (np * nr) - c * rr[j] / (nr * nr));
                        }
                    }
                    acc(&mut grads, *p, pv, |gp| add_assign(gp, &dp));
                    acc(&mut grads, *r, rv, |gr2| add_assign(gr2, &dr));
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows();
                        let gpart = g.slice_rows(at, at + rows);
                        acc(&mut grads, p, &self.nodes[p].value, |gp| add_assign(gp, &gpart));
                        at += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| {
                        for r in 0..g.rows() {
                            for (o, gg) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                                *o += gg;
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        acc(&mut grads, p, &self.nodes[p].value, |gp| {
                            for r in 0..gp.rows() {
                                for (o, gg) in gp.row_mut(r).iter_mut().zip(&g.row(r)[at..at + w]) {
                                    *o += gg;
                                }
                            }
                        });
                        at += w;
                    }
                }
                Op::SumList(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, &self.nodes[p].value, |gp| add_assign(gp, &g));
                    }
                }
                Op::RowSum(x) => {
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| {
                        for r in 0..gx.rows() {
                            let gg = g.get(r, 0);
                            for o in gx.row_mut(r) {
                                *o += gg;
                            }
                        }
                    });
                }
                Op::SoftmaxRows(x) => {
                    let s = &self.nodes[id].value;
                    acc(&mut grads, *x, &self.nodes[*x].value, |gx| {
                        for r in 0..s.rows() {
                            let sr = s.row(r);
                            let gr = g.row(r);
                            let inner = dot(gr, sr);
                            for ((o, &sv), &gv) in gx.row_mut(r).iter_mut().zip(sr).zip(gr) {
                                *o += sv * (gv - inner);
                            }
                        }
                    });
                }
                Op::ScaleByEntry { x, s, idx } => {
                    let sv = self.nodes[*s].value.as_slice()[*idx];
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads, *x, xv, |gx| {
                        for (o, gg) in gx.as_mut_slice().iter_mut().zip(g.as_slice()) {
                            *o += sv * gg;
                        }
                    });
                    let contrib: f64 = g.as_slice().iter().zip(xv.as_slice()).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *s, &self.nodes[*s].value, |gs| {
                        gs.as_mut_slice()[*idx] += contrib;
                    });
                }
                Op::PairGaps { e, triplets, n_users } => {
                    let ev = &self.nodes[*e].value;
                    acc(&mut grads, *e, ev, |ge| {
                        for (b, &(u, p, ng)) in triplets.iter().enumerate() {
                            let gb = g.get(b, 0);
                            if gb == 0.0 {
                                continue;
                            }
                            let (ip, ineg) = (n_users + p, n_users + ng);
                            for j in 0..ev.cols() {
                                let eu = ev.get(u, j);
                                let delta = ev.get(ip, j) - ev.get(ineg, j);
                                ge.row_mut(u)[j] += gb * delta;
                                ge.row_mut(ip)[j] += gb * eu;
                                ge.row_mut(ineg)[j] -= gb * eu;
                            }
                        }
                    });
                }
                Op::NegLogSigmoidSum(x) => {
                    let gv = g.get(0, 0);
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads, *x, xv, |gx| {
                        for (o, &z) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                            // d/dz softplus(-z) = -sigmoid(-z) = sigmoid(z) - 1
                            *o += gv * (sigmoid(z) - 1.0);
                        }
                    });
                }
                Op::SqNormRows { x, rows } => {
                    let gv = g.get(0, 0);
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads, *x, xv, |gx| {
                        for &r in rows.iter() {
                            for (o, &e) in gx.row_mut(r).iter_mut().zip(xv.row(r)) {
                                *o += 2.0 * gv * e;
                            }
                        }
                    });
                }
                Op::SqNormFull(x) => {
                    let gv = g.get(0, 0);
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads, *x, xv, |gx| {
                        for (o, &e) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                            *o += 2.0 * gv * e;
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn softplus(z: f64) -> f64 {
    // ln(1 + e^z) without overflow for large |z|
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_assign(dst: &mut DenseMatrix, src: &DenseMatrix) {
    for (o, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *o += s;
    }
}

fn sub_assign(dst: &mut DenseMatrix, src: &DenseMatrix) {
    for (o, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *o -= s;
    }
}

/// Accumulate into the gradient slot for `id`, zero-initializing it to the
/// shape of that node's value on first touch.
fn acc(
    grads: &mut [Option<DenseMatrix>],
    id: NodeId,
    value: &DenseMatrix,
    f: impl FnOnce(&mut DenseMatrix),
) {
    let slot = grads[id].get_or_insert_with(|| DenseMatrix::zeros(value.rows(), value.cols()));
    f(slot);
}
