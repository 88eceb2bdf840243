//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! value; [`Tape::backward`] walks the record in reverse and pushes adjoints
//! into the parameter gradient slots of a [`GradSink`]. Besides the usual
//! dense-network operations the tape knows the structured per-frame
//! operations of the dynamics pipeline (packed Cholesky inertia, packed
//! skew-symmetric matrices, batched matrix-vector products, temporal lags and
//! the masked relative energy residual).

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::activation::{sigmoid, Activation};
use super::matrix::{gemm, Matrix};
use super::param::{GradSink, Param, ParamId};
use crate::error::{check_len, Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Act(usize, Activation),
    ConcatCols(usize, usize),
    CholeskyInertia { raw: usize, dim: usize, factor: Matrix },
    Skew { raw: usize, dim: usize },
    LagDiff(usize),
    LagMean(usize),
    MatVec { m: usize, v: usize, dim: usize },
    RowDot(usize, usize),
    RelResidual { de: usize, w: usize, delta: f64, mask: Vec<bool> },
    HuberMean { r: usize, knee: f64, start: usize },
    MseMean { a: usize, target: Matrix, start: usize },
    SumSquares(usize),
    Conv1d { x: usize, kernel: usize, bias: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Number of packed lower-triangular entries of a `dim x dim` matrix.
pub(crate) fn lower_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Number of packed strictly-upper entries of a `dim x dim` matrix.
pub(crate) fn strict_upper_len(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::TapeMissing);
        }
        Ok(v.index as usize)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: (self.nodes.len() - 1) as u32,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Matrix> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v)?;
        check_len("scalar node", 1, m.len())?;
        Ok(m.as_slice()[0])
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, p: &Param) -> Var {
        self.push(p.value.clone(), Op::Param(p.id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        check_len("matmul inner dimension", va.cols(), vb.rows())?;
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (va, vr) = (&self.nodes[ia].value, &self.nodes[ir].value);
        check_len("broadcast row height", 1, vr.rows())?;
        check_len("broadcast row width", va.cols(), vr.cols())?;
        let mut out = va.clone();
        for t in 0..out.rows() {
            for (x, b) in out.row_mut(t).iter_mut().zip(vr.as_slice()) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddRow(ia, ir)))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Matrix)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        check_len("elementwise rows", va.rows(), vb.rows())?;
        check_len("elementwise cols", va.cols(), vb.cols())?;
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Matrix::from_vec(va.rows(), va.cols(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.scaled(s);
        Ok(self.push(out, Op::Scale(ia, s)))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|x| act.apply(x));
        Ok(self.push(out, Op::Act(ia, act)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        check_len("concat rows", va.rows(), vb.rows())?;
        let out = Matrix::from_fn(va.rows(), va.cols() + vb.cols(), |t, j| {
            if j < va.cols() {
                va.get(t, j)
            } else {
                vb.get(t, j - va.cols())
            }
        });
        Ok(self.push(out, Op::ConcatCols(ia, ib)))
    }

    /// Per row: packed lower-triangular entries to `M = L Lᵀ` (flattened `dim x dim`),
    /// with `L_ii = softplus(raw_ii) + eps`.
    pub fn cholesky_inertia(&mut self, raw: Var, dim: usize, eps: f64) -> Result<Var> {
        let ir = self.idx(raw)?;
        let vr = &self.nodes[ir].value;
        check_len("packed inertia width", lower_len(dim), vr.cols())?;
        let frames = vr.rows();
        let mut factor = Matrix::zeros(frames, dim * dim);
        let mut out = Matrix::zeros(frames, dim * dim);
        for t in 0..frames {
            let l = factor.row_mut(t);
            crate::dynamics::unpack_lower(vr.row(t), dim, eps, l);
            let l = factor.row(t);
            crate::dynamics::lower_times_transpose(l, dim, out.row_mut(t));
        }
        Ok(self.push(out, Op::CholeskyInertia { raw: ir, dim, factor }))
    }

    /// Per row: packed strictly-upper entries to `N = N_up - N_upᵀ`.
    pub fn skew(&mut self, raw: Var, dim: usize) -> Result<Var> {
        let ir = self.idx(raw)?;
        let vr = &self.nodes[ir].value;
        check_len("packed skew width", strict_upper_len(dim), vr.cols())?;
        let mut out = Matrix::zeros(vr.rows(), dim * dim);
        for t in 0..vr.rows() {
            crate::dynamics::unpack_skew(vr.row(t), dim, out.row_mut(t));
        }
        Ok(self.push(out, Op::Skew { raw: ir, dim }))
    }

    /// `out[t] = a[t] - a[t-1]` for `t ≥ 1`, `out[0] = 0`.
    pub fn lag_diff(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let mut out = Matrix::zeros(va.rows(), va.cols());
        for t in 1..va.rows() {
            let (cur, prev) = (va.row(t), va.row(t - 1));
            for (o, (c, p)) in out.row_mut(t).iter_mut().zip(cur.iter().zip(prev)) {
                *o = c - p;
            }
        }
        Ok(self.push(out, Op::LagDiff(ia)))
    }

    /// `out[t] = (a[t] + a[t-1]) / 2` for `t ≥ 1`, `out[0] = 0`.
    pub fn lag_mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let mut out = Matrix::zeros(va.rows(), va.cols());
        for t in 1..va.rows() {
            let (cur, prev) = (va.row(t), va.row(t - 1));
            for (o, (c, p)) in out.row_mut(t).iter_mut().zip(cur.iter().zip(prev)) {
                *o = 0.5 * (c + p);
            }
        }
        Ok(self.push(out, Op::LagMean(ia)))
    }

    /// Per row: flattened `dim x dim` matrix times `dim`-vector.
    pub fn mat_vec(&mut self, m: Var, v: Var, dim: usize) -> Result<Var> {
        let (im, iv) = (self.idx(m)?, self.idx(v)?);
        let (vm, vv) = (&self.nodes[im].value, &self.nodes[iv].value);
        check_len("batched matrix width", dim * dim, vm.cols())?;
        check_len("batched vector width", dim, vv.cols())?;
        check_len("batched rows", vm.rows(), vv.rows())?;
        let mut out = Matrix::zeros(vv.rows(), dim);
        for t in 0..vv.rows() {
            crate::linalg::matvec(vm.row(t), vv.row(t), out.row_mut(t));
        }
        Ok(self.push(out, Op::MatVec { m: im, v: iv, dim }))
    }

    /// Per-row inner product, `T x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, _) = self.zip(a, b, |_, _| 0.0)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = (0..va.rows())
            .map(|t| va.row(t).iter().zip(vb.row(t)).map(|(x, y)| x * y).sum())
            .collect();
        let out = Matrix::from_vec(va.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(ia, ib)))
    }

    /// Masked relative residual `(ΔE - W) / (|ΔE| + |W| + δ)` on `T x 1` inputs.
    ///
    /// Row 0 is always zero; a row is masked (zero, no gradient) when
    /// `|ΔE| + |W| < eta`.
    pub fn rel_residual(&mut self, de: Var, w: Var, delta: f64, eta: f64) -> Result<Var> {
        let (ide, iw, _) = self.zip(de, w, |_, _| 0.0)?;
        let (vde, vw) = (&self.nodes[ide].value, &self.nodes[iw].value);
        check_len("residual width", 1, vde.cols())?;
        let rows = vde.rows();
        let mut mask = vec![false; rows];
        let mut out = Matrix::zeros(rows, 1);
        for t in 1..rows {
            let (a, b) = (vde.get(t, 0), vw.get(t, 0));
            let scale = a.abs() + b.abs();
            if scale >= eta {
                mask[t] = true;
                out.set(t, 0, (a - b) / (scale + delta));
            }
        }
        Ok(self.push(
            out,
            Op::RelResidual {
                de: ide,
                w: iw,
                delta,
                mask,
            },
        ))
    }

    /// Mean Huber penalty of rows `start..` of a column.
    pub fn huber_mean(&mut self, r: Var, knee: f64, start: usize) -> Result<Var> {
        let ir = self.idx(r)?;
        let vr = &self.nodes[ir].value;
        check_len("huber width", 1, vr.cols())?;
        let n = vr.rows().saturating_sub(start);
        let total: f64 = (start..vr.rows()).map(|t| huber(vr.get(t, 0), knee)).sum();
        let value = if n == 0 { 0.0 } else { total / n as f64 };
        Ok(self.push(Matrix::scalar(value), Op::HuberMean { r: ir, knee, start }))
    }

    /// Mean squared error against a constant target over rows `start..`.
    pub fn mse_mean(&mut self, a: Var, target: &Matrix, start: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        check_len("mse rows", va.rows(), target.rows())?;
        check_len("mse cols", va.cols(), target.cols())?;
        let n = va.rows().saturating_sub(start) * va.cols();
        let mut total = 0.0;
        for t in start..va.rows() {
            for (x, y) in va.row(t).iter().zip(target.row(t)) {
                total += (x - y) * (x - y);
            }
        }
        let value = if n == 0 { 0.0 } else { total / n as f64 };
        Ok(self.push(
            Matrix::scalar(value),
            Op::MseMean {
                a: ia,
                target: target.clone(),
                start,
            },
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.as_slice().iter().map(|x| x * x).sum();
        Ok(self.push(Matrix::scalar(s), Op::SumSquares(ia)))
    }

    /// Same-length 1-D convolution of a `1 x T` signal with a `1 x k` kernel
    /// (odd `k`, zero padding) plus a `1 x 1` bias.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (ix, ik, ib) = (self.idx(x)?, self.idx(kernel)?, self.idx(bias)?);
        let (vx, vk, vb) = (&self.nodes[ix].value, &self.nodes[ik].value, &self.nodes[ib].value);
        check_len("conv signal rows", 1, vx.rows())?;
        check_len("conv bias", 1, vb.len())?;
        let y = super::conv::conv1d(vx.as_slice(), vk.as_slice(), vb.as_slice()[0])?;
        let out = Matrix::row_vector(y);
        Ok(self.push(
            out,
            Op::Conv1d {
                x: ix,
                kernel: ik,
                bias: ib,
            },
        ))
    }

    /// Reverse pass from a scalar node; parameter gradients go to `sink`.
    pub fn backward(&self, loss: Var, sink: &mut impl GradSink) -> Result<()> {
        self.backward_scaled(loss, 1.0, sink)
    }

    /// Like [`Tape::backward`] with the seed adjoint set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64, sink: &mut impl GradSink) -> Result<()> {
        let il = self.idx(loss)?;
        check_len("loss node size", 1, self.nodes[il].value.len())?;
        let mut adj: Vec<Option<Matrix>> = vec![None; il + 1];
        adj[il] = Some(Matrix::scalar(seed));
        for i in (0..=il).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => sink.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    gemm(false, &g, true, vb, 1.0, slot(&mut adj, *a, va));
                    gemm(true, va, false, &g, 1.0, slot(&mut adj, *b, vb));
                }
                Op::AddRow(a, r) => {
                    slot(&mut adj, *a, &g).add_assign(&g);
                    let vr = &self.nodes[*r].value;
                    let dr = slot(&mut adj, *r, vr);
                    for t in 0..g.rows() {
                        for (d, x) in dr.as_mut_slice().iter_mut().zip(g.row(t)) {
                            *d += x;
                        }
                    }
                }
                Op::Add(a, b) => {
                    slot(&mut adj, *a, &g).add_assign(&g);
                    slot(&mut adj, *b, &g).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    slot(&mut adj, *a, &g).add_assign(&g);
                    let db = slot(&mut adj, *b, &g);
                    for (d, x) in db.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *d -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da = slot(&mut adj, *a, va);
                    for ((d, x), y) in da.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                        *d += x * y;
                    }
                    let db = slot(&mut adj, *b, vb);
                    for ((d, x), y) in db.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                        *d += x * y;
                    }
                }
                Op::Scale(a, s) => {
                    let da = slot(&mut adj, *a, &g);
                    for (d, x) in da.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *d += s * x;
                    }
                }
                Op::Act(a, act) => {
                    let input = &self.nodes[*a].value;
                    let out = &node.value;
                    let da = slot(&mut adj, *a, input);
                    let it = da
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(input.as_slice().iter().zip(out.as_slice()));
                    for ((d, x), (&inp, &o)) in it {
                        let deriv = match act {
                            Activation::Identity => 1.0,
                            Activation::Relu => {
                                if inp > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Softplus => sigmoid(inp),
                            Activation::Sigmoid => o * (1.0 - o),
                        };
                        *d += x * deriv;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ca = va.cols();
                    let da = slot(&mut adj, *a, va);
                    for t in 0..g.rows() {
                        for (d, x) in da.row_mut(t).iter_mut().zip(&g.row(t)[..ca]) {
                            *d += x;
                        }
                    }
                    let db = slot(&mut adj, *b, vb);
                    for t in 0..g.rows() {
                        for (d, x) in db.row_mut(t).iter_mut().zip(&g.row(t)[ca..]) {
                            *d += x;
                        }
                    }
                }
                Op::CholeskyInertia { raw, dim, factor } => {
                    let vr = &self.nodes[*raw].value;
                    let dr = slot(&mut adj, *raw, vr);
                    let d = *dim;
                    let mut dl = vec![0.0; d * d];
                    for t in 0..g.rows() {
                        let (gm, l) = (g.row(t), factor.row(t));
                        // dL = (dM + dMᵀ) L, restricted to the lower triangle
                        for i in 0..d {
                            for j in 0..=i {
                                dl[i * d + j] = (0..d).map(|k| (gm[i * d + k] + gm[k * d + i]) * l[k * d + j]).sum();
                            }
                        }
                        let raw_row = vr.row(t);
                        let out = dr.row_mut(t);
                        let mut p = 0;
                        for i in 0..d {
                            for j in 0..=i {
                                out[p] += if i == j {
                                    dl[i * d + i] * sigmoid(raw_row[p])
                                } else {
                                    dl[i * d + j]
                                };
                                p += 1;
                            }
                        }
                    }
                }
                Op::Skew { raw, dim } => {
                    let vr = &self.nodes[*raw].value;
                    let dr = slot(&mut adj, *raw, vr);
                    let d = *dim;
                    for t in 0..g.rows() {
                        let gm = g.row(t);
                        let out = dr.row_mut(t);
                        let mut p = 0;
                        for i in 0..d {
                            for j in i + 1..d {
                                out[p] += gm[i * d + j] - gm[j * d + i];
                                p += 1;
                            }
                        }
                    }
                }
                Op::LagDiff(a) => {
                    let da = slot(&mut adj, *a, &g);
                    for t in 1..g.rows() {
                        for (c, x) in g.row(t).iter().enumerate() {
                            let cols = g.cols();
                            da.as_mut_slice()[t * cols + c] += x;
                            da.as_mut_slice()[(t - 1) * cols + c] -= x;
                        }
                    }
                }
                Op::LagMean(a) => {
                    let da = slot(&mut adj, *a, &g);
                    for t in 1..g.rows() {
                        for (c, x) in g.row(t).iter().enumerate() {
                            let cols = g.cols();
                            da.as_mut_slice()[t * cols + c] += 0.5 * x;
                            da.as_mut_slice()[(t - 1) * cols + c] += 0.5 * x;
                        }
                    }
                }
                Op::MatVec { m, v, dim } => {
                    let (vm, vv) = (&self.nodes[*m].value, &self.nodes[*v].value);
                    let d = *dim;
                    let dm = slot(&mut adj, *m, vm);
                    for t in 0..g.rows() {
                        let (gt, vt) = (g.row(t), vv.row(t));
                        let row = dm.row_mut(t);
                        for i in 0..d {
                            for j in 0..d {
                                row[i * d + j] += gt[i] * vt[j];
                            }
                        }
                    }
                    let dv = slot(&mut adj, *v, vv);
                    for t in 0..g.rows() {
                        let (gt, mt) = (g.row(t), vm.row(t));
                        let row = dv.row_mut(t);
                        for j in 0..d {
                            row[j] += (0..d).map(|i| mt[i * d + j] * gt[i]).sum::<f64>();
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da = slot(&mut adj, *a, va);
                    for t in 0..g.rows() {
                        let s = g.get(t, 0);
                        for (d, y) in da.row_mut(t).iter_mut().zip(vb.row(t)) {
                            *d += s * y;
                        }
                    }
                    let db = slot(&mut adj, *b, vb);
                    for t in 0..g.rows() {
                        let s = g.get(t, 0);
                        for (d, x) in db.row_mut(t).iter_mut().zip(va.row(t)) {
                            *d += s * x;
                        }
                    }
                }
                Op::RelResidual { de, w, delta, mask } => {
                    let (vde, vw) = (&self.nodes[*de].value, &self.nodes[*w].value);
                    let mut gde = Matrix::zeros(vde.rows(), 1);
                    let mut gw = Matrix::zeros(vw.rows(), 1);
                    for t in 1..g.rows() {
                        if !mask[t] {
                            continue;
                        }
                        let (a, b) = (vde.get(t, 0), vw.get(t, 0));
                        let s = a.abs() + b.abs() + delta;
                        let num = a - b;
                        let gt = g.get(t, 0);
                        gde.set(t, 0, gt * (1.0 / s - num * sign(a) / (s * s)));
                        gw.set(t, 0, gt * (-1.0 / s - num * sign(b) / (s * s)));
                    }
                    slot(&mut adj, *de, vde).add_assign(&gde);
                    slot(&mut adj, *w, vw).add_assign(&gw);
                }
                Op::HuberMean { r, knee, start } => {
                    let vr = &self.nodes[*r].value;
                    let n = vr.rows().saturating_sub(*start);
                    if n > 0 {
                        let s = g.as_slice()[0] / n as f64;
                        let dr = slot(&mut adj, *r, vr);
                        for t in *start..vr.rows() {
                            let x = vr.get(t, 0);
                            let deriv = if x.abs() <= *knee { x } else { knee * sign(x) };
                            dr.as_mut_slice()[t] += s * deriv;
                        }
                    }
                }
                Op::MseMean { a, target, start } => {
                    let va = &self.nodes[*a].value;
                    let n = va.rows().saturating_sub(*start) * va.cols();
                    if n > 0 {
                        let s = 2.0 * g.as_slice()[0] / n as f64;
                        let da = slot(&mut adj, *a, va);
                        for t in *start..va.rows() {
                            let (x, y) = (va.row(t), target.row(t));
                            for (c, d) in da.row_mut(t).iter_mut().enumerate() {
                                *d += s * (x[c] - y[c]);
                            }
                        }
                    }
                }
                Op::SumSquares(a) => {
                    let va = &self.nodes[*a].value;
                    let s = g.as_slice()[0];
                    let da = slot(&mut adj, *a, va);
                    for (d, x) in da.as_mut_slice().iter_mut().zip(va.as_slice()) {
                        *d += 2.0 * s * x;
                    }
                }
                Op::Conv1d { x, kernel, bias } => {
                    let (vx, vk) = (&self.nodes[*x].value, &self.nodes[*kernel].value);
                    let (xs, ks) = (vx.as_slice(), vk.as_slice());
                    let (len, klen) = (xs.len(), ks.len());
                    let half = klen / 2;
                    let mut dx = vec![0.0; len];
                    let mut dk = vec![0.0; klen];
                    let mut db = 0.0;
                    for (t, &gt) in g.as_slice().iter().enumerate() {
                        db += gt;
                        for k in 0..klen {
                            let src = t + k;
                            if src < half || src - half >= len {
                                continue;
                            }
                            dx[src - half] += gt * ks[k];
                            dk[k] += gt * xs[src - half];
                        }
                    }
                    slot(&mut adj, *x, vx).add_assign(&Matrix::row_vector(dx));
                    slot(&mut adj, *kernel, vk).add_assign(&Matrix::from_vec(vk.rows(), vk.cols(), dk)?);
                    let vb = &self.nodes[*bias].value;
                    slot(&mut adj, *bias, vb).as_mut_slice()[0] += db;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn huber(x: f64, knee: f64) -> f64 {
    if x.abs() <= knee {
        0.5 * x * x
    } else {
        knee * (x.abs() - 0.5 * knee)
    }
}

fn slot<'a>(adj: &'a mut [Option<Matrix>], i: usize, like: &Matrix) -> &'a mut Matrix {
    adj[i].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}
