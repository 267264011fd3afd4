//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly: values are computed when the op is
//! pushed, and [`Tape::backward`] walks the record in reverse applying each op's
//! analytic adjoint. Parameters are borrowed from a [`ParamStore`] rather than copied,
//! so building a tape per sample is cheap. Inputs created with [`Tape::constant`] do
//! not receive gradients and any op whose parents are all constant is skipped in the
//! backward sweep.

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LnClamped(Var, f64),
    Powf(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    ShiftRows(Var, isize),
    PairwiseAdd(Var, Var),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    LayerNorm(Var, Vec<f64>),
    NormalizeRows(Var, Vec<f64>),
    Threshold(Var, f64),
    GatherElems(Var, Vec<(usize, usize)>),
}

struct Node<S> {
    value: Option<Tensor<S>>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::shape(op, format!("{}x{}", a.0, a.1), format!("{}x{}", b.0, b.1))
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v).get(0, 0)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let v = matmul_nn(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(shape_err("add_row", (1, sa.1), sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (x, &y) in v.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of an m×n matrix elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(shape_err("mul_row", (1, sa.1), sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (x, &y) in v.row_mut(i).iter_mut().zip(&r) {
                *x *= y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let k = S::of(s);
        let v = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let k = S::of(s);
        let v = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// 1 - a, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// ln(max(a, eps)); clamped entries pass no gradient.
    pub fn ln_clamped(&mut self, a: Var, eps: f64) -> Var {
        let e = S::of(eps);
        let src = self.value(a);
        let clamped = src.data().iter().filter(|&&x| x < e).count();
        if clamped > 0 {
            log::debug!("ln_clamped: {clamped} entries clamped at {eps}");
        }
        let v = src.map(|x| x.max(e).ln());
        let rg = self.rg(a);
        self.push(v, Op::LnClamped(a, eps), rg)
    }

    /// a^p for nonnegative a.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let pp = S::of(p);
        let v = self.value(a).map(|x| {
            if p == 0.0 {
                S::one()
            } else {
                x.powf(pp)
            }
        });
        let rg = self.rg(a);
        self.push(v, Op::Powf(a, p), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_masked(a, None)
            .expect("unmasked softmax cannot fail")
    }

    /// Row softmax. `mask[i*cols + j] == false` forces an exact zero weight; the
    /// maximum and normalizer are taken over unmasked entries only. A fully masked
    /// row yields all zeros.
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.shape();
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::shape("softmax mask", r * c, m.len()));
            }
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = src.row(i);
            let allowed = |j: usize| mask.map_or(true, |m| m[i * c + j]);
            let mut mx = S::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) && x > mx {
                    mx = x;
                }
            }
            if mx == S::neg_infinity() {
                continue;
            }
            let orow = out.row_mut(i);
            let mut z = S::zero();
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (x - mx).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (r, c) = src.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = src.row(i);
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<S>().ln();
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat_cols", (rows, s.1), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let w = t.cols();
            for i in 0..rows {
                out.row_mut(i)[off..off + w].copy_from_slice(t.row(i));
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", (t.rows(), cols), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if start + len > src.cols() {
            return Err(Error::shape("slice_cols", format!("<= {}", src.cols()), start + len));
        }
        let out = Tensor::from_fn(src.rows(), len, |i, j| src.get(i, start + j));
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if start + len > src.rows() {
            return Err(Error::shape("slice_rows", format!("<= {}", src.rows()), start + len));
        }
        let cols = src.cols();
        let out = Tensor::from_vec(len, cols, src.data()[start * cols..(start + len) * cols].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Gathers rows by index (repeats allowed); used for embedding lookup and hint masking.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::Index {
                what: "rows",
                index: bad,
                size: src.rows(),
            });
        }
        let out = src.select_rows(idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// out[i] = a[i + offset], zero outside the valid range.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let src = self.value(a);
        let (r, c) = src.shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let j = i as isize + offset;
            if j >= 0 && (j as usize) < r {
                out.row_mut(i).copy_from_slice(src.row(j as usize));
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ShiftRows(a, offset), rg)
    }

    /// For a: m×h and b: n×h, returns (m·n)×h with row i·n+j = a_i + b_j.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("pairwise_add", ta.shape(), tb.shape()));
        }
        let (m, n, h) = (ta.rows(), tb.rows(), ta.cols());
        let mut out = Tensor::zeros(m * n, h);
        for i in 0..m {
            for j in 0..n {
                let row = out.row_mut(i * n + j);
                for ((o, &x), &y) in row.iter_mut().zip(ta.row(i)).zip(tb.row(j)) {
                    *o = x + y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::PairwiseAdd(a, b), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        let out = Tensor::from_vec(rows, cols, src.data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::filled(1, 1, s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / S::of(t.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(Tensor::filled(1, 1, s), Op::MeanAll(a), rg)
    }

    /// m×1 column of row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |i, _| t.row(i).iter().copied().sum());
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    /// 1×n mean over rows (mean pool over a sequence).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg)
    }

    /// 1×n max over rows (max pool over a sequence); ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        let mut arg = vec![0usize; c];
        let mut out = Tensor::zeros(1, c);
        for j in 0..c {
            let mut best = S::neg_infinity();
            for i in 0..r {
                let x = t.get(i, j);
                if x > best {
                    best = x;
                    arg[j] = i;
                }
            }
            out.set(0, j, best);
        }
        let rg = self.rg(a);
        self.push(out, Op::MaxRows(a, arg), rg)
    }

    /// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        let n = S::of(c as f64);
        let mut out = Tensor::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
            let is = S::one() / (var + S::of(eps)).sqrt();
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is.as_f64());
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm(a, inv_std), rg)
    }

    /// Scales each row to unit L2 norm; zero rows map to zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        let mut out = Tensor::zeros(r, c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row(i);
            let nrm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
            if nrm > S::zero() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                    *o = x / nrm;
                }
            }
            norms.push(nrm.as_f64());
        }
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows(a, norms), rg)
    }

    /// Keeps entries >= threshold, zeroes the rest.
    pub fn threshold(&mut self, a: Var, threshold: f64) -> Var {
        let e = S::of(threshold);
        let v = self.value(a).map(|x| if x >= e { x } else { S::zero() });
        let rg = self.rg(a);
        self.push(v, Op::Threshold(a, threshold), rg)
    }

    /// 1×k row of the listed (row, col) entries.
    pub fn gather_elems(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, idx.len());
        for (k, &(i, j)) in idx.iter().enumerate() {
            if i >= t.rows() || j >= t.cols() {
                return Err(Error::Index {
                    what: "gather_elems",
                    index: i * t.cols() + j,
                    size: t.len(),
                });
            }
            out.set(0, k, t.get(i, j));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherElems(a, idx.to_vec()), rg))
    }

    /// Mean token cross-entropy of row-wise logits against target column indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::shape("cross_entropy targets", r, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index {
                what: "class",
                index: bad,
                size: c,
            });
        }
        let lp = self.log_softmax_rows(logits);
        let idx: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, &t)| (i, t)).collect();
        let picked = self.gather_elems(lp, &idx)?;
        let m = self.mean_all(picked);
        Ok(self.scale(m, -1.0))
    }

    /// Runs the reverse sweep from a 1×1 node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(1, 1, S::one()));
        let mut out = vec![None; self.params.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(i, &node.op, g, &mut grads, &mut out);
        }
        Gradients::from_vec(out)
    }

    fn acc<'g>(
        &self,
        grads: &'g mut [Option<Tensor<S>>],
        v: Var,
    ) -> Option<&'g mut Tensor<S>> {
        if !self.rg(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn backprop_node(
        &self,
        idx: usize,
        op: &Op,
        g: Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
        out: &mut [Option<Tensor<S>>],
    ) {
        let y = || self.value(Var(idx));
        match op {
            Op::Constant => {}
            Op::Param(id) => match &mut out[id.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let d = matmul_nt(&g, self.value(*b));
                    self.acc(grads, *a).unwrap().add_assign(&d);
                }
                if self.rg(*b) {
                    let d = matmul_tn(self.value(*a), &g);
                    self.acc(grads, *b).unwrap().add_assign(&d);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.add_assign(&g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (x, &d) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.zip_map(self.value(*b), |u, v| u * v);
                    self.acc(grads, *a).unwrap().add_assign(&d);
                }
                if self.rg(*b) {
                    let d = g.zip_map(self.value(*a), |u, v| u * v);
                    self.acc(grads, *b).unwrap().add_assign(&d);
                }
            }
            Op::AddRow(a, r) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gr) = self.acc(grads, *r) {
                    for i in 0..g.rows() {
                        for (x, &d) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::MulRow(a, r) => {
                if self.rg(*a) {
                    let row = self.value(*r).data().to_vec();
                    let ga = self.acc(grads, *a).unwrap();
                    for i in 0..g.rows() {
                        for ((x, &d), &w) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(&row) {
                            *x += d * w;
                        }
                    }
                }
                if self.rg(*r) {
                    let av = self.value(*a);
                    let mut d = vec![S::zero(); g.cols()];
                    for i in 0..g.rows() {
                        for ((x, &gd), &ad) in d.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *x += gd * ad;
                        }
                    }
                    let gr = self.acc(grads, *r).unwrap();
                    for (x, &v) in gr.data_mut().iter_mut().zip(&d) {
                        *x += v;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let k = S::of(*s);
                    for (x, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += k * d;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&g);
                }
            }
            Op::Tanh(a) => {
                let d = g.zip_map(y(), |gd, yv| gd * (S::one() - yv * yv));
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(y(), |gd, yv| gd * yv * (S::one() - yv));
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(y(), |gd, yv| if yv > S::zero() { gd } else { S::zero() });
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::LnClamped(a, eps) => {
                let e = S::of(*eps);
                let d = g.zip_map(self.value(*a), |gd, x| if x >= e { gd / x } else { S::zero() });
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::Powf(a, p) => {
                if *p != 0.0 {
                    let pp = S::of(*p);
                    let pm1 = S::of(*p - 1.0);
                    let d = g.zip_map(self.value(*a), |gd, x| {
                        if x == S::zero() && *p < 1.0 {
                            S::zero()
                        } else {
                            gd * pp * x.powf(pm1)
                        }
                    });
                    if let Some(ga) = self.acc(grads, *a) {
                        ga.add_assign(&d);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let yv = y();
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: S = g.row(i).iter().zip(yv.row(i)).map(|(&u, &v)| u * v).sum();
                    for ((o, &gd), &p) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(yv.row(i)) {
                        *o = p * (gd - dot);
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::LogSoftmaxRows(a) => {
                let yv = y();
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let gs: S = g.row(i).iter().copied().sum();
                    for ((o, &gd), &lp) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(yv.row(i)) {
                        *o = gd - lp.exp() * gs;
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for i in 0..g.rows() {
                            for (x, &d) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + w]) {
                                *x += d;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let cols = g.cols();
                for &p in parts {
                    let h = self.shape(p).0;
                    if let Some(gp) = self.acc(grads, p) {
                        for (x, &d) in gp
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[off * cols..(off + h) * cols])
                        {
                            *x += d;
                        }
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.rows() {
                        for (x, &d) in ga.row_mut(i)[*start..*start + g.cols()].iter_mut().zip(g.row(i)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.rows() {
                        for (x, &d) in ga.row_mut(start + i).iter_mut().zip(g.row(i)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::SelectRows(a, idx) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, &i) in idx.iter().enumerate() {
                        for (x, &d) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::ShiftRows(a, offset) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let r = g.rows();
                    for i in 0..r {
                        let j = i as isize + offset;
                        if j >= 0 && (j as usize) < r {
                            for (x, &d) in ga.row_mut(j as usize).iter_mut().zip(g.row(i)) {
                                *x += d;
                            }
                        }
                    }
                }
            }
            Op::PairwiseAdd(a, b) => {
                let n = self.shape(*b).0;
                let m = self.shape(*a).0;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            for (x, &d) in ga.row_mut(i).iter_mut().zip(g.row(i * n + j)) {
                                *x += d;
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            for (x, &d) in gb.row_mut(j).iter_mut().zip(g.row(i * n + j)) {
                                *x += d;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += d;
                    }
                }
            }
            Op::SumAll(a) => {
                let s = g.get(0, 0);
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.data_mut() {
                        *x += s;
                    }
                }
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len().max(1);
                let s = g.get(0, 0) / S::of(n as f64);
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.data_mut() {
                        *x += s;
                    }
                }
            }
            Op::RowSum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..ga.rows() {
                        let s = g.get(i, 0);
                        for x in ga.row_mut(i) {
                            *x += s;
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let k = S::one() / S::of(ga.rows().max(1) as f64);
                    for i in 0..ga.rows() {
                        for (x, &d) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                            *x += d * k;
                        }
                    }
                }
            }
            Op::MaxRows(a, arg) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (j, &i) in arg.iter().enumerate() {
                        let cur = ga.get(i, j);
                        ga.set(i, j, cur + g.get(0, j));
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                let yv = y();
                let c = g.cols();
                let n = S::of(c as f64);
                let mut d = Tensor::zeros(g.rows(), c);
                for i in 0..g.rows() {
                    let gm = g.row(i).iter().copied().sum::<S>() / n;
                    let gy = g.row(i).iter().zip(yv.row(i)).map(|(&u, &v)| u * v).sum::<S>() / n;
                    let is = S::of(inv_std[i]);
                    for ((o, &gd), &yy) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(yv.row(i)) {
                        *o = is * (gd - gm - yy * gy);
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::NormalizeRows(a, norms) => {
                let yv = y();
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    if norms[i] <= 0.0 {
                        continue;
                    }
                    let nrm = S::of(norms[i]);
                    let dot: S = g.row(i).iter().zip(yv.row(i)).map(|(&u, &v)| u * v).sum();
                    for ((o, &gd), &yy) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(yv.row(i)) {
                        *o = (gd - yy * dot) / nrm;
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::Threshold(a, t) => {
                let e = S::of(*t);
                let d = g.zip_map(self.value(*a), |gd, x| if x >= e { gd } else { S::zero() });
                if let Some(ga) = self.acc(grads, *a) {
                    ga.add_assign(&d);
                }
            }
            Op::GatherElems(a, idx) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, &(i, j)) in idx.iter().enumerate() {
                        let cur = ga.get(i, j);
                        ga.set(i, j, cur + g.get(0, k));
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
