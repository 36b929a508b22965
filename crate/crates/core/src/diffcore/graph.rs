//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep. One graph is
//! owned by one thread; independent graphs may be built concurrently against
//! a shared read-only [`ParamStore`].

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinalgKind {
    MatMul,
    Transpose,
    ConcatRows,
    ConcatCols,
    Add,
    /// Multiplies `a` by the 1x1 tensor `b`.
    Scale,
    MeanRows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Exp,
    SoftmaxRows,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    BroadcastRows(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    SumAll(Var),
    PickLogProb {
        logits: Var,
        mask: Vec<bool>,
        chosen: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    grads: Option<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Row-wise softmax with the row maximum subtracted, normalizer summed in f64.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.to_f();
        }
        let inv = T::from_f(1.0 / sum);
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

/// Softmax restricted to the unmasked entries (`mask[j] == true` means allowed);
/// masked entries get probability zero.
pub fn masked_softmax_rows<T: Real>(x: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
    if mask.len() != x.len() {
        return Err(shape_err("masked_softmax", x.shape(), [mask.len(), 1]));
    }
    let cols = x.cols();
    let mut out = Tensor::zeros(x.rows(), cols);
    for r in 0..x.rows() {
        let m = &mask[r * cols..(r + 1) * cols];
        let row = x.row(r);
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .fold(T::neg_infinity(), |acc, (&v, _)| acc.max(v));
        if max == T::neg_infinity() {
            return Err(Error::AllMasked(r));
        }
        let mut sum = 0.0f64;
        let mut tmp = vec![0.0f64; cols];
        for j in 0..cols {
            if m[j] {
                tmp[j] = (row[j] - max).to_f().exp();
                sum += tmp[j];
            }
        }
        for j in 0..cols {
            if m[j] {
                out.set(r, j, T::from_f(tmp[j] / sum));
            }
        }
    }
    Ok(out)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter as a differentiable leaf (once per graph).
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra ----

    pub fn linalg(&mut self, a: Var, b: Var, kind: LinalgKind) -> Result<Var> {
        match kind {
            LinalgKind::MatMul => self.matmul(a, b),
            LinalgKind::Transpose => Ok(self.transpose(a)),
            LinalgKind::ConcatRows => self.concat_rows(&[a, b]),
            LinalgKind::ConcatCols => self.concat_cols(&[a, b]),
            LinalgKind::Add => self.add(a, b),
            LinalgKind::Scale => self.scale_by(a, b),
            LinalgKind::MeanRows => Ok(self.mean_rows(a)),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let out = self.value(a).matmul_nt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s[0] {
            return Err(shape_err("slice_rows", s, [start, len]));
        }
        let c = s[1];
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(len, c, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s[1] {
            return Err(shape_err("slice_cols", s, [start, len]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let out = Tensor::new(s[0], len, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= s[0]) {
            return Err(shape_err("gather_rows", s, [idx.len(), 1]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * s[1]);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(idx.len(), s[1], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[0] != 1 || n == 0 {
            return Err(shape_err("broadcast_rows", s, [n, s[1]]));
        }
        let row = self.value(a).data().to_vec();
        let out = Tensor::new(n, s[1], row.repeat(n))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastRows(a), rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa[0], sa[1], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb[0] != 1 || sb[1] != sa[1] {
            return Err(shape_err("add_row", sa, sb));
        }
        let mut out = self.value(a).clone();
        let row = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(sa[1]) {
            for (v, &r) in chunk.iter_mut().zip(row) {
                *v = *v + r;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Multiplies by the value of a `1 x 1` node (e.g. a trainable scalar).
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != [1, 1] {
            return Err(shape_err("scale_by", self.shape(a), ss));
        }
        let k = self.value(s).item();
        let out = self.value(a).map(|v| k * v);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let [r, c] = src.shape();
        let mut acc = vec![0.0f64; c];
        for i in 0..r {
            for (s, v) in acc.iter_mut().zip(src.row(i)) {
                *s += v.to_f();
            }
        }
        let data = acc.into_iter().map(|s| T::from_f(s / r as f64)).collect();
        let out = Tensor::new(1, c, data).expect("non-empty");
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        let rg = self.rg(a);
        self.push(Tensor::scalar(T::from_f(s)), Op::SumAll(a), rg)
    }

    // ---- activations ----

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if !self.value(x).is_finite() {
            return Err(Error::NonFinite("activation input"));
        }
        let rg = self.rg(x);
        let (out, op) = match kind {
            Activation::Relu => (self.value(x).map(|v| v.max(T::zero())), Op::Relu(x)),
            Activation::Tanh => (self.value(x).map(T::tanh), Op::Tanh(x)),
            Activation::Exp => (self.value(x).map(T::exp), Op::Exp(x)),
            Activation::SoftmaxRows => (softmax_rows(self.value(x)), Op::SoftmaxRows(x)),
        };
        if !out.is_finite() {
            return Err(Error::NonFinite("activation output"));
        }
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Exp)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::SoftmaxRows)
    }

    /// Log-probability of `chosen[r]` under the masked softmax of row `r`.
    /// Returns a `rows x 1` column together with the full probability matrix.
    pub fn pick_log_prob(
        &mut self,
        logits: Var,
        mask: &[bool],
        chosen: &[usize],
    ) -> Result<(Var, Tensor<T>)> {
        let s = self.shape(logits);
        if chosen.len() != s[0] {
            return Err(shape_err("pick_log_prob", s, [chosen.len(), 1]));
        }
        if !self.value(logits).is_finite() {
            return Err(Error::NonFinite("pick_log_prob input"));
        }
        let probs = masked_softmax_rows(self.value(logits), mask)?;
        let mut out = Vec::with_capacity(s[0]);
        for (r, &c) in chosen.iter().enumerate() {
            if c >= s[1] || !mask[r * s[1] + c] {
                return Err(Error::IllegalAction { action: c, step: r });
            }
            // log p = x_c - max - log(sum exp(x - max)) over allowed entries
            let row = self.value(logits).row(r);
            let m = &mask[r * s[1]..(r + 1) * s[1]];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .fold(f64::NEG_INFINITY, |acc, (&v, _)| acc.max(v.to_f()));
            let lse: f64 = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| (v.to_f() - max).exp())
                .sum::<f64>()
                .ln();
            out.push(T::from_f(row[c].to_f() - max - lse));
        }
        let out = Tensor::new(s[0], 1, out)?;
        let rg = self.rg(logits);
        let v = self.push(
            out,
            Op::PickLogProb {
                logits,
                mask: mask.to_vec(),
                chosen: chosen.to_vec(),
                probs: probs.clone(),
            },
            rg,
        );
        Ok((v, probs))
    }

    // ---- backward ----

    /// Reverse sweep from a `1 x 1` loss. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Backward("backward already ran on this graph".into()));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::Backward(format!(
                "loss must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Backward("loss does not depend on any differentiable leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |v: Var, t: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, g.matmul_nt(val(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, val(*a).matmul_tn(g), grads);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    send(*a, g.matmul(val(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, g.matmul_tn(val(*a)), grads);
                }
            }
            Op::Transpose(a) => send(*a, g.transpose(), grads),
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let r = val(p).rows();
                    let data = g.data()[off * c..(off + r) * c].to_vec();
                    send(p, Tensor::new(r, c, data).expect("shape"), grads);
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let [r, c] = val(p).shape();
                    let mut data = Vec::with_capacity(r * c);
                    for row in 0..r {
                        data.extend_from_slice(&g.row(row)[off..off + c]);
                    }
                    send(p, Tensor::new(r, c, data).expect("shape"), grads);
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let [r, c] = val(*a).shape();
                let mut t = Tensor::zeros(r, c);
                t.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                send(*a, t, grads);
            }
            Op::SliceCols(a, start) => {
                let [r, c] = val(*a).shape();
                let w = g.cols();
                let mut t = Tensor::zeros(r, c);
                for row in 0..r {
                    t.data_mut()[row * c + start..row * c + start + w].copy_from_slice(g.row(row));
                }
                send(*a, t, grads);
            }
            Op::GatherRows(a, idx) => {
                let [r, c] = val(*a).shape();
                let mut t = Tensor::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (dst, &v) in t.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row(k)) {
                        *dst = *dst + v;
                    }
                }
                send(*a, t, grads);
            }
            Op::BroadcastRows(a) => send(*a, column_sums(g), grads),
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, hadamard(g, val(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, hadamard(g, val(*a)), grads);
                }
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone(), grads);
                if self.rg(*b) {
                    send(*b, column_sums(g), grads);
                }
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * *s), grads),
            Op::ScaleBy(a, s) => {
                let k = val(*s).item();
                if self.rg(*a) {
                    send(*a, g.map(|v| v * k), grads);
                }
                if self.rg(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(val(*a).data())
                        .map(|(&x, &y)| x.to_f() * y.to_f())
                        .sum();
                    send(*s, Tensor::scalar(T::from_f(dot)), grads);
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                send(*a, Tensor::new(g.rows(), g.cols(), data).expect("shape"), grads);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                    .collect();
                send(*a, Tensor::new(g.rows(), g.cols(), data).expect("shape"), grads);
            }
            Op::Exp(a) => send(*a, hadamard(g, &node.value), grads),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut t = Tensor::zeros(y.rows(), c);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a.to_f() * b.to_f()).sum();
                    let dot = T::from_f(dot);
                    for j in 0..c {
                        t.set(r, j, yr[j] * (gr[j] - dot));
                    }
                }
                send(*a, t, grads);
            }
            Op::MeanRows(a) => {
                let [r, c] = val(*a).shape();
                let inv = T::from_f(1.0 / r as f64);
                let row: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                send(*a, Tensor::new(r, c, row.repeat(r)).expect("shape"), grads);
            }
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                send(*a, Tensor::filled(r, c, g.item()), grads);
            }
            Op::PickLogProb {
                logits,
                mask,
                chosen,
                probs,
            } => {
                let [r, c] = probs.shape();
                let mut t = Tensor::zeros(r, c);
                for row in 0..r {
                    let gr = g.get(row, 0);
                    for j in 0..c {
                        if !mask[row * c + j] {
                            continue;
                        }
                        let ind = if j == chosen[row] { T::one() } else { T::zero() };
                        t.set(row, j, gr * (ind - probs.get(row, j)));
                    }
                }
                send(*logits, t, grads);
            }
        }
    }

    /// Gradient of the loss with respect to `v` after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    /// Gradients of every bound parameter, in parameter order. Parameters that
    /// did not influence the loss receive zeros.
    pub fn param_grads(&self) -> Result<Vec<(ParamId, Tensor<T>)>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Backward("no gradients: backward has not run".into()))?;
        Ok(self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(pid, v)| {
                let v = (*v)?;
                let g = grads[v.0].clone().unwrap_or_else(|| {
                    let [r, c] = self.shape(v);
                    Tensor::zeros(r, c)
                });
                Some((ParamId(pid), g))
            })
            .collect())
    }
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape")
}

fn column_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let c = g.cols();
    let mut acc = vec![0.0f64; c];
    for r in 0..g.rows() {
        for (s, v) in acc.iter_mut().zip(g.row(r)) {
            *s += v.to_f();
        }
    }
    Tensor::new(1, c, acc.into_iter().map(T::from_f).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul_returns_rhs() {
        let mut g = Graph::new();
        let i = g.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let w = g.constant(t(&[vec![0.3, -2.0], vec![5.0, 7.5]]));
        let y = g.matmul(i, w).unwrap();
        assert_eq!(g.value(y), g.value(w));
    }

    #[test]
    fn concat_rows_shape() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(4, 3));
        let c = g.linalg(a, b, LinalgKind::ConcatRows).unwrap();
        assert_eq!(g.shape(c), [6, 3]);
    }

    #[test]
    fn mean_rows_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant(t(&[vec![2.0, 4.0], vec![6.0, 8.0]]));
        let m = g.mean_rows(a);
        assert_eq!(g.value(m).data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn activations_basic_values() {
        let mut g = Graph::new();
        let z = g.constant(t(&[vec![0.0, 0.0]]));
        let s = g.softmax_rows(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let x = g.constant(t(&[vec![-1.0, 2.0]]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let zero = g.constant(Tensor::scalar(0.0));
        let th = g.tanh(zero).unwrap();
        assert_eq!(g.value(th).item(), 0.0);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[vec![f64::NAN, 1.0]]));
        assert!(matches!(g.relu(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, -2.0, 3.0]]));
        let l = g.sum_all(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_pick_first_gradient() {
        // d softmax_0 / dx at x = [0, 0] is [p0(1-p0), -p0 p1] = [0.25, -0.25]
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![0.0, 0.0]]));
        let s = g.softmax_rows(x).unwrap();
        let pick = g.constant(t(&[vec![1.0], vec![0.0]]));
        let l = g.matmul(s, pick).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25, -0.25]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0]]));
        let l = g.sum_all(x);
        g.backward(l).unwrap();
        assert!(g.backward(l).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, 2.0]]));
        assert!(g.backward(x).is_err());
        let mut g = Graph::new();
        let c = g.constant(t(&[vec![1.0]]));
        assert!(g.backward(c).is_err());
    }

    #[test]
    fn pick_log_prob_respects_mask() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, 5.0, 2.0]]));
        let mask = [true, false, true];
        let (lp, probs) = g.pick_log_prob(x, &mask, &[0]).unwrap();
        assert_eq!(probs.get(0, 1), 0.0);
        let expected = 1.0 - (1f64.exp() + 2f64.exp()).ln();
        assert!((g.value(lp).item() - expected).abs() < 1e-12);
        assert!(g.pick_log_prob(x, &mask, &[1]).is_err());
        g.backward(lp).unwrap();
        assert_eq!(g.grad(x).unwrap().get(0, 1), 0.0);
    }
}
