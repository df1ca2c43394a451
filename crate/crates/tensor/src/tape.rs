//! Reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters enter it by
//! reference, intermediate values are owned by their nodes, and
//! [`Tape::backward`] walks the nodes in reverse creation order.

use std::borrow::Cow;

use crate::error::TensorError;
use crate::param::{Gradients, ParamId, ParamStore};
use crate::real::{gemm_into, MatView, Real};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Reshape(Var),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { src: Var, idx: Vec<usize> },
    SelectRows { take_new: Vec<bool>, new: Var, old: Var },
    Softmax { src: Var, axis: usize },
    MaskedSoftmax { src: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Vec<F>, count: usize },
    LstmCell { gates: Var, c_prev: Var, cache: Vec<F> },
    AdditiveScores { keys: Var, query: Var, v: Var, act: Vec<F> },
    WeightedSum { weights: Var, states: Var },
}

impl<F> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Param(_) => vec![],
            MatMul(a, b) | Add(a, b) | AddRow(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | Sigmoid(a) | Tanh(a) | Sum(a) | Reshape(a) => vec![*a],
            SliceCols { src, .. } | SliceRows { src, .. } | GatherRows { src, .. } => vec![*src],
            Softmax { src, .. } | MaskedSoftmax { src, .. } => vec![*src],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
            SelectRows { new, old, .. } => vec![*new, *old],
            CrossEntropy { logits, .. } => vec![*logits],
            LstmCell { gates, c_prev, .. } => vec![*gates, *c_prev],
            AdditiveScores { keys, query, v, .. } => vec![*keys, *query, *v],
            WeightedSum { weights, states } => vec![*weights, *states],
        }
    }
}

struct Node<'p, F: Real> {
    value: Cow<'p, Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<'p, F: Real> {
    store: &'p ParamStore<F>,
    nodes: Vec<Node<'p, F>>,
    param_vars: Vec<Option<Var>>,
    track: bool,
}

type Result<T> = std::result::Result<T, TensorError>;

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn mismatch(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

impl<'p, F: Real> Tape<'p, F> {
    /// Tape that records gradients for every parameter of `store`.
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], track: true }
    }

    /// Tape for pure forward evaluation; [`Tape::backward`] yields no gradients.
    pub fn inference(store: &'p ParamStore<F>) -> Self {
        Self { track: false, ..Self::new(store) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// The single element of a scalar-valued node.
    pub fn scalar(&self, v: Var) -> F {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let needs_grad = self.track && op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store: &'p ParamStore<F> = self.store;
        self.nodes.push(Node {
            value: Cow::Borrowed(&store.get(id).value),
            op: Op::Param(id),
            needs_grad: self.track,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).expect_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![F::zero(); m * n];
        gemm_into(
            MatView::new(self.value(a).data(), m, k),
            MatView::new(self.value(b).data(), k, n),
            &mut out,
            false,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` bias to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.len() != cols {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.tanh()).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Tanh(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = t.data().to_vec();
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Reshape(a)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.mat(a, "slice_cols")?;
        if start + len > cols {
            return Err(TensorError::IndexOutOfRange { op: "slice_cols", index: start + len, bound: cols });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![rows, len], data), Op::SliceCols { src: a, start }))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.mat(a, "slice_rows")?;
        if start + len > rows {
            return Err(TensorError::IndexOutOfRange { op: "slice_rows", index: start + len, bound: rows });
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, cols], data), Op::SliceRows { src: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.mat(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat(p, "concat_cols")?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.mat(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.mat(p, "concat_rows")?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), self.value(p)));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_parts(vec![rows, cols], data), Op::ConcatRows(parts.to_vec())))
    }

    /// Row lookup: output row `i` is row `idx[i]` of `src` (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.mat(src, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: bad, bound: rows });
        }
        let table = self.value(src).data();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&table[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), cols], data),
            Op::GatherRows { src, idx: idx.to_vec() },
        ))
    }

    /// Row `r` comes from `new` when `take_new[r]`, otherwise from `old`.
    pub fn select_rows(&mut self, take_new: &[bool], new: Var, old: Var) -> Result<Var> {
        let (rows, cols) = self.mat(new, "select_rows")?;
        if self.value(old).shape() != self.value(new).shape() {
            return Err(mismatch("select_rows", self.value(new), self.value(old)));
        }
        if take_new.len() != rows {
            return Err(TensorError::Invalid {
                op: "select_rows",
                msg: format!("mask has {} entries for {rows} rows", take_new.len()),
            });
        }
        let (tn, to) = (self.value(new).data(), self.value(old).data());
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &keep) in take_new.iter().enumerate() {
            let src = if keep { tn } else { to };
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::SelectRows { take_new: take_new.to_vec(), new, old },
        ))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape().len().max(1) {
            return Err(TensorError::Invalid { op: "softmax", msg: format!("axis {axis} for shape {:?}", t.shape()) });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        if len == 0 {
            return Err(TensorError::Invalid { op: "softmax", msg: "empty axis".into() });
        }
        let x = t.data();
        let mut y = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    y[at(j)] /= z;
                }
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, y), Op::Softmax { src: a, axis }))
    }

    /// Row-wise softmax over the entries where `keep` is true; the rest are 0.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let (rows, cols) = self.mat(a, "masked_softmax")?;
        if keep.len() != rows * cols {
            return Err(TensorError::Invalid {
                op: "masked_softmax",
                msg: format!("mask has {} entries for {rows}x{cols}", keep.len()),
            });
        }
        let x = self.value(a).data();
        let mut y = vec![F::zero(); x.len()];
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            let max = span
                .clone()
                .filter(|&j| keep[j])
                .map(|j| x[j])
                .fold(F::neg_infinity(), F::max);
            if max == F::neg_infinity() {
                continue;
            }
            let mut z = F::zero();
            for j in span.clone().filter(|&j| keep[j]) {
                let e = (x[j] - max).exp();
                y[j] = e;
                z += e;
            }
            for j in span {
                y[j] /= z;
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], y),
            Op::MaskedSoftmax { src: a },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping rows whose target equals `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (rows, vocab) = self.mat(logits, "cross_entropy")?;
        if targets.len() != rows {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("{} targets for {rows} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore && t >= vocab) {
            return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: bad, bound: vocab });
        }
        let count = targets.iter().filter(|&&t| t != ignore).count();
        if count == 0 {
            return Err(TensorError::EmptyTargets);
        }
        let x = self.value(logits).data();
        let mut probs = vec![F::zero(); x.len()];
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = &x[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            probs[r * vocab..(r + 1) * vocab].iter_mut().for_each(|p| *p /= z);
            total += z.ln() + max - row[t];
        }
        let loss = total / F::from_f64(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, count },
        ))
    }

    /// Fused LSTM cell. `gates` is `[B×4H]` pre-activations ordered
    /// (input, forget, output, candidate); returns `[B×2H]` holding `h‖c`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (b, h4) = self.mat(gates, "lstm_cell")?;
        let (b2, h) = self.mat(c_prev, "lstm_cell")?;
        if b != b2 || h4 != 4 * h {
            return Err(mismatch("lstm_cell", self.value(gates), self.value(c_prev)));
        }
        let g = self.value(gates).data();
        let cp = self.value(c_prev).data();
        // cache per row: i, f, o, u, tanh(c)
        let mut cache = vec![F::zero(); b * 5 * h];
        let mut out = vec![F::zero(); b * 2 * h];
        for r in 0..b {
            let gr = &g[r * 4 * h..(r + 1) * 4 * h];
            let cr = &mut cache[r * 5 * h..(r + 1) * 5 * h];
            for j in 0..h {
                let i = sigmoid(gr[j]);
                let f = sigmoid(gr[h + j]);
                let o = sigmoid(gr[2 * h + j]);
                let u = gr[3 * h + j].tanh();
                let c = f * cp[r * h + j] + i * u;
                let tc = c.tanh();
                cr[j] = i;
                cr[h + j] = f;
                cr[2 * h + j] = o;
                cr[3 * h + j] = u;
                cr[4 * h + j] = tc;
                out[r * 2 * h + j] = o * tc;
                out[r * 2 * h + h + j] = c;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, 2 * h], out), Op::LstmCell { gates, c_prev, cache }))
    }

    /// Additive attention scores in time-major layout.
    ///
    /// `keys` is `[(S·B)×A]` with row `s·B + b`, `query` is `[B×A]`, `v` has
    /// `A` elements. Returns `[B×S]` with `score[b,s] = v·tanh(keys[s,b] + query[b])`.
    pub fn additive_scores(&mut self, keys: Var, query: Var, v: Var) -> Result<Var> {
        let (sb, a) = self.mat(keys, "additive_scores")?;
        let (b, a2) = self.mat(query, "additive_scores")?;
        if a != a2 || b == 0 || sb % b != 0 || self.value(v).len() != a {
            return Err(mismatch("additive_scores", self.value(keys), self.value(query)));
        }
        let s_len = sb / b;
        let (k, q, vv) = (self.value(keys).data(), self.value(query).data(), self.value(v).data());
        let mut act = vec![F::zero(); sb * a];
        let mut out = vec![F::zero(); b * s_len];
        for s in 0..s_len {
            for bi in 0..b {
                let row = s * b + bi;
                let mut acc = F::zero();
                for j in 0..a {
                    let t = (k[row * a + j] + q[bi * a + j]).tanh();
                    act[row * a + j] = t;
                    acc += vv[j] * t;
                }
                out[bi * s_len + s] = acc;
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, s_len], out),
            Op::AdditiveScores { keys, query, v, act },
        ))
    }

    /// `out[b] = Σ_s weights[b,s] · states[s·B + b]` for `[B×S]` weights and
    /// time-major `[(S·B)×D]` states.
    pub fn weighted_sum(&mut self, weights: Var, states: Var) -> Result<Var> {
        let (b, s_len) = self.mat(weights, "weighted_sum")?;
        let (sb, d) = self.mat(states, "weighted_sum")?;
        if sb != s_len * b {
            return Err(mismatch("weighted_sum", self.value(weights), self.value(states)));
        }
        let (w, st) = (self.value(weights).data(), self.value(states).data());
        let mut out = vec![F::zero(); b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for s in 0..s_len {
                let wt = w[bi * s_len + s];
                if wt == F::zero() {
                    continue;
                }
                let row = &st[(s * b + bi) * d..(s * b + bi + 1) * d];
                for (x, &y) in o.iter_mut().zip(row) {
                    *x += wt * y;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, d], out), Op::WeightedSum { weights, states }))
    }

    /// Gradients of the scalar `loss` with respect to every parameter it
    /// reaches. Calling this twice and accumulating both results doubles
    /// the stored gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut per_param: Vec<Option<Vec<F>>> = vec![None; self.store.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { per_param });
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Param(pid) = node.op {
                match &mut per_param[pid.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { per_param })
    }

    fn propagate(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let one = F::one();
        // Allocates the input's gradient buffer on first use and hands it to `f`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = &mut grads[v.0];
            let buf = slot.get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let gv = MatView::new(g, m, n);
                acc(*a, &mut |buf| gemm_into(gv, MatView::new(tb.data(), k, n).t(), buf, true));
                acc(*b, &mut |buf| gemm_into(MatView::new(ta.data(), m, k).t(), gv, buf, true));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                let cols = self.value(*bias).len();
                acc(*bias, &mut |buf| {
                    for row in g.chunks(cols) {
                        buf.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * db[i];
                    }
                });
                acc(*b, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * da[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c)),
            Op::Sigmoid(a) => acc(*a, &mut |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * out[i] * (one - out[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * (one - out[i] * out[i]);
                }
            }),
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|x| *x += g[0])),
            Op::Reshape(a) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y)),
            Op::SliceCols { src, start } => {
                let cols = self.value(*src).cols();
                let len = node.value.cols();
                acc(*src, &mut |buf| {
                    for (r, row) in g.chunks(len).enumerate() {
                        let dst = &mut buf[r * cols + start..r * cols + start + len];
                        dst.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::SliceRows { src, start } => {
                let cols = self.value(*src).cols();
                acc(*src, &mut |buf| {
                    let dst = &mut buf[start * cols..start * cols + g.len()];
                    dst.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |buf| {
                        for (r, row) in buf.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |buf| {
                        buf.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, &y)| *x += y)
                    });
                    offset += n;
                }
            }
            Op::GatherRows { src, idx } => {
                let cols = self.value(*src).cols();
                acc(*src, &mut |buf| {
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut buf[i * cols..(i + 1) * cols];
                        dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::SelectRows { take_new, new, old } => {
                let cols = node.value.cols();
                for (v, want) in [(*new, true), (*old, false)] {
                    acc(v, &mut |buf| {
                        for (r, &t) in take_new.iter().enumerate() {
                            if t == want {
                                let span = r * cols..(r + 1) * cols;
                                buf[span.clone()].iter_mut().zip(&g[span]).for_each(|(x, &y)| *x += y);
                            }
                        }
                    });
                }
            }
            Op::Softmax { src, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                acc(*src, &mut |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: F = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..len {
                                buf[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { src } => {
                let cols = node.value.cols();
                acc(*src, &mut |buf| {
                    for r in 0..node.value.rows() {
                        let span = r * cols..(r + 1) * cols;
                        let dot: F = span.clone().map(|j| g[j] * out[j]).sum();
                        for j in span {
                            buf[j] += out[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, ignore, probs, count } => {
                let vocab = self.value(*logits).cols();
                let scale = g[0] / F::from_f64(*count as f64);
                acc(*logits, &mut |buf| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &mut buf[r * vocab..(r + 1) * vocab];
                        for (x, &p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                            *x += scale * p;
                        }
                        row[t] -= scale;
                    }
                });
            }
            Op::LstmCell { gates, c_prev, cache } => {
                let h = self.value(*c_prev).cols();
                let b = self.value(*c_prev).rows();
                let cp = self.value(*c_prev).data();
                let mut dgates = vec![F::zero(); b * 4 * h];
                let mut dcp = vec![F::zero(); b * h];
                for r in 0..b {
                    let cr = &cache[r * 5 * h..(r + 1) * 5 * h];
                    for j in 0..h {
                        let (i, f, o, u, tc) = (cr[j], cr[h + j], cr[2 * h + j], cr[3 * h + j], cr[4 * h + j]);
                        let dh = g[r * 2 * h + j];
                        let dc = g[r * 2 * h + h + j] + dh * o * (one - tc * tc);
                        let dg = &mut dgates[r * 4 * h..(r + 1) * 4 * h];
                        dg[j] = dc * u * i * (one - i);
                        dg[h + j] = dc * cp[r * h + j] * f * (one - f);
                        dg[2 * h + j] = dh * tc * o * (one - o);
                        dg[3 * h + j] = dc * i * (one - u * u);
                        dcp[r * h + j] = dc * f;
                    }
                }
                acc(*gates, &mut |buf| buf.iter_mut().zip(&dgates).for_each(|(x, &y)| *x += y));
                acc(*c_prev, &mut |buf| buf.iter_mut().zip(&dcp).for_each(|(x, &y)| *x += y));
            }
            Op::AdditiveScores { keys, query, v, act } => {
                let (b, s_len) = (node.value.rows(), node.value.cols());
                let a = self.value(*query).cols();
                let vv = self.value(*v).data();
                // d pre-activation, laid out like `keys`
                let mut dpre = vec![F::zero(); s_len * b * a];
                let mut dv = vec![F::zero(); a];
                for s in 0..s_len {
                    for bi in 0..b {
                        let gs = g[bi * s_len + s];
                        let row = s * b + bi;
                        for j in 0..a {
                            let t = act[row * a + j];
                            dv[j] += gs * t;
                            dpre[row * a + j] = gs * vv[j] * (one - t * t);
                        }
                    }
                }
                acc(*keys, &mut |buf| buf.iter_mut().zip(&dpre).for_each(|(x, &y)| *x += y));
                acc(*query, &mut |buf| {
                    for s in 0..s_len {
                        for bi in 0..b {
                            let src = &dpre[(s * b + bi) * a..(s * b + bi + 1) * a];
                            buf[bi * a..(bi + 1) * a].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        }
                    }
                });
                acc(*v, &mut |buf| buf.iter_mut().zip(&dv).for_each(|(x, &y)| *x += y));
            }
            Op::WeightedSum { weights, states } => {
                let (b, s_len) = (self.value(*weights).rows(), self.value(*weights).cols());
                let d = node.value.cols();
                let (w, st) = (self.value(*weights).data(), self.value(*states).data());
                acc(*weights, &mut |buf| {
                    for bi in 0..b {
                        let go = &g[bi * d..(bi + 1) * d];
                        for s in 0..s_len {
                            let row = &st[(s * b + bi) * d..(s * b + bi + 1) * d];
                            buf[bi * s_len + s] += go.iter().zip(row).map(|(&x, &y)| x * y).sum::<F>();
                        }
                    }
                });
                acc(*states, &mut |buf| {
                    for bi in 0..b {
                        let go = &g[bi * d..(bi + 1) * d];
                        for s in 0..s_len {
                            let wt = w[bi * s_len + s];
                            let row = &mut buf[(s * b + bi) * d..(s * b + bi + 1) * d];
                            row.iter_mut().zip(go).for_each(|(x, &y)| *x += wt * y);
                        }
                    }
                });
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    if shape.is_empty() {
        return (1, 1, 1);
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
