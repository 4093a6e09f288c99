//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every forward call appends a node holding its value and the operation that
//! produced it. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates vector-Jacobian products into the inputs.

use std::rc::Rc;

use crate::error::{shape_err, Result, TensorError};
use crate::ops::{softmax_in_place, Activation};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Rc<Tensor>),
    Act(Var, Activation),
    GatherRows(Var, Rc<[usize]>),
    EmbedRows(Var, Rc<[Option<usize>]>),
    ConcatCols(Vec<Var>),
    SelectCol(Var, usize),
    MulCol(Var, Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SoftmaxRows(Var),
    Sum(Var),
    Mse(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: Box<BatchNormCache>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Column statistics computed by a train-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// How a batch-norm node normalizes its input.
#[derive(Debug, Clone, Copy)]
pub enum Normalize<'a> {
    /// Use the statistics of the current batch (rows).
    Batch,
    /// Use fixed running statistics; the op is then a per-feature affine map.
    Running { mean: &'a [f64], var: &'a [f64] },
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, sa, sb);
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `a (r×c) + b (1×c)` with `b` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return shape_err("add_row", ta.shape(), tb.shape());
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    /// Elementwise product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != mask.shape() {
            return shape_err("mul_const", tx.shape(), mask.shape());
        }
        let data = tx.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::matrix(tx.rows(), tx.cols(), data);
        Ok(self.push(out, Op::MulConst(x, Rc::new(mask))))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let out = act.apply_tensor(self.value(x));
        self.push(out, Op::Act(x, act))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= ta.rows() {
                return shape_err("gather_rows", ta.shape(), &[i]);
            }
            data.extend_from_slice(ta.row_slice(i));
        }
        if idx.is_empty() {
            return Err(TensorError::Config("gather_rows with no indices".into()));
        }
        let out = Tensor::matrix(idx.len(), c, data);
        Ok(self.push(out, Op::GatherRows(a, idx)))
    }

    /// Row lookup into `table`; `None` entries produce zero rows.
    pub fn embed_rows(&mut self, table: Var, idx: Rc<[Option<usize>]>) -> Result<Var> {
        let tt = self.value(table);
        let c = tt.cols();
        if idx.is_empty() {
            return Err(TensorError::Config("embed_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for slot in idx.iter() {
            match *slot {
                Some(i) if i < tt.rows() => data.extend_from_slice(tt.row_slice(i)),
                Some(i) => return shape_err("embed_rows", tt.shape(), &[i]),
                None => data.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let out = Tensor::matrix(idx.len(), c, data);
        Ok(self.push(out, Op::EmbedRows(table, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Config("concat_cols with no inputs".into()));
        };
        let r = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != r {
                return shape_err("concat_cols", self.value(first).shape(), self.value(p).shape());
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = Tensor::matrix(r, total, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let ta = self.value(a);
        if col >= ta.cols() {
            return shape_err("select_col", ta.shape(), &[col]);
        }
        let data = (0..ta.rows()).map(|r| ta.get(r, col)).collect();
        let out = Tensor::column(data);
        Ok(self.push(out, Op::SelectCol(a, col)))
    }

    /// Scales row `r` of `a` by `s[r]`, where `s` is a column vector.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return shape_err("mul_col", ta.shape(), ts.shape());
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= ts.data()[i / c];
        }
        Ok(self.push(out, Op::MulCol(a, s)))
    }

    fn check_offsets(&self, op: &'static str, rows: usize, offsets: &[usize]) -> Result<()> {
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
            return shape_err(op, &[rows], &[offsets.len()]);
        }
        for w in offsets.windows(2) {
            if w[1] <= w[0] {
                return Err(TensorError::EmptyNeighborhood(format!(
                    "{op}: segment starting at row {} is empty",
                    w[0]
                )));
            }
        }
        Ok(())
    }

    /// Softmax of a column vector within each segment `offsets[k]..offsets[k+1]`.
    pub fn segment_softmax(&mut self, scores: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let ts = self.value(scores);
        if ts.cols() != 1 {
            return shape_err("segment_softmax", ts.shape(), &[ts.rows(), 1]);
        }
        self.check_offsets("segment_softmax", ts.rows(), &offsets)?;
        let mut out = ts.clone();
        for w in offsets.windows(2) {
            softmax_in_place(&mut out.data_mut()[w[0]..w[1]]);
        }
        Ok(self.push(out, Op::SegmentSoftmax(scores, offsets)))
    }

    /// Sums the rows of each segment, producing one row per segment.
    pub fn segment_sum(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        self.check_offsets("segment_sum", ta.rows(), &offsets)?;
        let c = ta.cols();
        let segs = offsets.len() - 1;
        let mut data = vec![0.0; segs * c];
        for (k, w) in offsets.windows(2).enumerate() {
            let dst = &mut data[k * c..(k + 1) * c];
            for r in w[0]..w[1] {
                for (d, s) in dst.iter_mut().zip(ta.row_slice(r)) {
                    *d += s;
                }
            }
        }
        let out = Tensor::matrix(segs, c, data);
        Ok(self.push(out, Op::SegmentSum(a, offsets)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            softmax_in_place(chunk);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        self.same_shape("mse", pred, truth)?;
        let (tp, tt) = (self.value(pred), self.value(truth));
        let n = tp.len() as f64;
        let s: f64 = tp.data().iter().zip(tt.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, truth)))
    }

    /// Per-column normalization followed by `gamma ⊙ x̂ + beta`.
    ///
    /// Returns the batch statistics when they were computed from `x`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Normalize<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        for p in [gamma, beta] {
            let tp = self.value(p);
            if tp.rows() != 1 || tp.cols() != c {
                return shape_err("batch_norm", tx.shape(), tp.shape());
            }
        }
        let (mean, var, batch_stats) = match mode {
            Normalize::Batch => {
                let BatchStats { mean, var } = column_stats(tx);
                (mean, var, true)
            }
            Normalize::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err("batch_norm", tx.shape(), &[mean.len()]);
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = tx.clone();
        for (i, v) in xhat.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - mean[j]) * inv_std[j];
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .data()
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i % c] * h + b[i % c])
            .collect();
        let out = Tensor::matrix(r, c, data);
        let stats = batch_stats.then_some(BatchStats { mean, var });
        let cache = Box::new(BatchNormCache {
            xhat,
            inv_std,
            batch_stats,
        });
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, cache });
        Ok((v, stats))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let tl = self.value(loss);
        if tl.len() != 1 {
            return shape_err("backward", tl.shape(), &[1, 1]);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b));
                let gb = self.value(*a).t_matmul(g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = elementwise(g, self.value(*b), |x, y| x * y);
                let gb = elementwise(g, self.value(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(a, b) => {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for (k, v) in g.data().iter().enumerate() {
                    gb[k % c] += v;
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, Tensor::row(gb));
            }
            Op::Affine(x, k) => accumulate(grads, *x, g.map(|v| k * v)),
            Op::MulConst(x, mask) => accumulate(grads, *x, elementwise(g, mask, |a, b| a * b)),
            Op::Act(x, act) => {
                let (tx, ty) = (self.value(*x), &node.value);
                let data = g
                    .data()
                    .iter()
                    .zip(tx.data().iter().zip(ty.data()))
                    .map(|(gv, (&xv, &yv))| gv * act.derivative(xv, yv))
                    .collect();
                accumulate(grads, *x, Tensor::matrix(tx.rows(), tx.cols(), data));
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                scatter_rows(&mut ga, g, idx.iter().map(|&i| Some(i)));
                accumulate(grads, *a, ga);
            }
            Op::EmbedRows(a, idx) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                scatter_rows(&mut ga, g, idx.iter().copied());
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let r = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut data = Vec::with_capacity(r * c);
                    for row in 0..r {
                        data.extend_from_slice(&g.row_slice(row)[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(grads, p, Tensor::matrix(r, c, data));
                }
            }
            Op::SelectCol(a, col) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    ga.set(r, *col, g.data()[r]);
                }
                accumulate(grads, *a, ga);
            }
            Op::MulCol(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let c = ta.cols();
                let mut ga = g.clone();
                let mut gs = vec![0.0; ta.rows()];
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    let r = k / c;
                    gs[r] += *v * ta.data()[k];
                    *v *= ts.data()[r];
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *s, Tensor::column(gs));
            }
            Op::SegmentSoftmax(x, offsets) => {
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    softmax_vjp(&y[w[0]..w[1]], &g.data()[w[0]..w[1]], &mut gx[w[0]..w[1]]);
                }
                accumulate(grads, *x, Tensor::column(gx));
            }
            Op::SegmentSum(a, offsets) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut data = Vec::with_capacity(ta.len());
                for (k, w) in offsets.windows(2).enumerate() {
                    for _ in w[0]..w[1] {
                        data.extend_from_slice(&g.data()[k * c..(k + 1) * c]);
                    }
                }
                accumulate(grads, *a, Tensor::matrix(ta.rows(), c, data));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.data().chunks(c).zip(g.data().chunks(c)).zip(gx.chunks_mut(c)) {
                    softmax_vjp(yr, gr, out);
                }
                accumulate(grads, *a, Tensor::matrix(y.rows(), c, gx));
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                accumulate(grads, *a, Tensor::full(ta.rows(), ta.cols(), g.item()));
            }
            Op::Mse(p, t) => {
                let (tp, tt) = (self.value(*p), self.value(*t));
                let n = tp.len() as f64;
                let scale = 2.0 * g.item() / n;
                let gp = elementwise(tp, tt, |a, b| scale * (a - b));
                let gt = gp.map(|v| -v);
                accumulate(grads, *p, gp);
                accumulate(grads, *t, gt);
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (r, c) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                let xhat = cache.xhat.data();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for (k, gv) in g.data().iter().enumerate() {
                    ggamma[k % c] += gv * xhat[k];
                    gbeta[k % c] += gv;
                }
                let mut gx = vec![0.0; r * c];
                if cache.batch_stats {
                    let n = r as f64;
                    // dxhat = g * gamma; dx = inv_std/n * (n dxhat - Σdxhat - x̂ Σ(dxhat x̂))
                    let sum_d: Vec<f64> = gbeta.iter().zip(gam).map(|(s, gm)| s * gm).collect();
                    let sum_dx: Vec<f64> = ggamma.iter().zip(gam).map(|(s, gm)| s * gm).collect();
                    for (k, out) in gx.iter_mut().enumerate() {
                        let j = k % c;
                        let d = g.data()[k] * gam[j];
                        *out = cache.inv_std[j] / n * (n * d - sum_d[j] - xhat[k] * sum_dx[j]);
                    }
                } else {
                    for (k, out) in gx.iter_mut().enumerate() {
                        let j = k % c;
                        *out = g.data()[k] * gam[j] * cache.inv_std[j];
                    }
                }
                accumulate(grads, *x, Tensor::matrix(r, c, gx));
                accumulate(grads, *gamma, Tensor::row(ggamma));
                accumulate(grads, *beta, Tensor::row(gbeta));
            }
        }
    }

    /// Parameter leaves recorded on this tape.
    pub fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

/// Per-column mean and population variance over the rows of `t`.
pub fn column_stats(t: &Tensor) -> BatchStats {
    let (r, c) = (t.rows(), t.cols());
    let mut mean = vec![0.0; c];
    for i in 0..r {
        for (m, v) in mean.iter_mut().zip(t.row_slice(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut var = vec![0.0; c];
    for i in 0..r {
        for ((s, v), m) in var.iter_mut().zip(t.row_slice(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= r as f64);
    BatchStats { mean, var }
}

fn softmax_vjp(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

fn scatter_rows(dst: &mut Tensor, g: &Tensor, idx: impl Iterator<Item = Option<usize>>) {
    let c = dst.cols();
    for (r, slot) in idx.enumerate() {
        if let Some(i) = slot {
            let src = &g.data()[r * c..(r + 1) * c];
            for (d, s) in dst.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradient of every parameter leaf on `tape` into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (var, id) in tape.param_leaves() {
            if let Some(g) = self.get(var) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}
