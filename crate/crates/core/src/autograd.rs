//! A small reverse-mode automatic differentiation tape over [`Matrix`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! graph through [`Graph::param`], which copies the current value out of the
//! [`ParamStore`]; [`Graph::backward`] then yields one gradient per parameter
//! that the output depends on.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{sigmoid, Matrix};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    TMatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var),
    Softmax(Var),
    Sum(Var),
    Dropout(Var, Matrix),
    /// Per-span softmax pooling: rows, scores, spans, attention weights.
    SpanAttention(Var, Var, Vec<(usize, usize)>, Vec<Vec<f64>>),
    /// Scalar output whose local gradients w.r.t. each input are precomputed.
    Scalar(Vec<(Var, Matrix)>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    /// Present only on training graphs; drives dropout masks.
    dropout_rng: Option<ChaCha8Rng>,
}

impl Graph {
    /// An evaluation graph: dropout is the identity.
    pub fn new() -> Self {
        Self::default()
    }

    /// A training graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Inverted dropout with drop probability `p` on a training graph;
    /// returns `a` unchanged otherwise.
    pub fn input_dropout(&mut self, a: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        if p <= 0.0 {
            return a;
        }
        let (r, c) = self.nodes[a.0].value.shape();
        let keep = 1.0 - p;
        let data = (0..r * c)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.dropout(a, Matrix::from_vec(r, c, data))
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

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::TMatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b) => self.ng(*a) || self.ng(*b),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::MaxRows(a, _)
            | Op::MeanRows(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Dropout(a, _) => self.ng(*a),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.ng(*v)),
            Op::SpanAttention(a, b, _, _) => self.ng(*a) || self.ng(*b),
            Op::Scalar(parts) => parts.iter().any(|(v, _)| self.ng(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// The node for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(value, Op::MatMulT(a, b))
    }

    /// `aᵀ · b`
    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t_matmul(self.value(b));
        self.push(value, Op::TMatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.shape(), self.shape(b), "add shape mismatch");
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1 × d` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        let row = self.value(b);
        assert_eq!(row.shape(), (1, value.cols()), "add_row shape mismatch");
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(row.data()) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::concat_cols(&mats);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::concat_rows(&mats);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        self.push(value, Op::SliceCols(a, start))
    }

    /// Row lookup; indices may repeat.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).gather_rows(idx);
        self.push(value, Op::Gather(a, idx.to_vec()))
    }

    /// Column-wise maximum over rows, giving a `1 × d` row. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(m.rows() > 0, "max over zero rows");
        let mut arg = vec![0usize; m.cols()];
        let mut best = m.row(0).to_vec();
        for r in 1..m.rows() {
            for (c, &x) in m.row(r).iter().enumerate() {
                if x > best[c] {
                    best[c] = x;
                    arg[c] = r;
                }
            }
        }
        self.push(Matrix::row_vector(best), Op::MaxRows(a, arg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(m.rows() > 0, "mean over zero rows");
        let mut acc = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (s, x) in acc.iter_mut().zip(m.row(r)) {
                *s += x;
            }
        }
        let n = m.rows() as f64;
        acc.iter_mut().for_each(|s| *s /= n);
        self.push(Matrix::row_vector(acc), Op::MeanRows(a))
    }

    /// Softmax over all entries of `a`, keeping its shape.
    pub fn softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let max = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = m.data().iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let value = Matrix::from_vec(m.rows(), m.cols(), exps.iter().map(|e| e / z).collect());
        self.push(value, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Elementwise product with a fixed (already scaled) dropout mask.
    pub fn dropout(&mut self, a: Var, mask: Matrix) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), mask.shape(), "dropout mask shape mismatch");
        let data = x.data().iter().zip(mask.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(value, Op::Dropout(a, mask))
    }

    /// For each inclusive span `(s, e)`, the softmax over `scores[s..=e]`
    /// (an `n × 1` column) used to average `rows[s..=e]`. Output is one row
    /// per span.
    pub fn span_attention(&mut self, rows: Var, scores: Var, spans: &[(usize, usize)]) -> Var {
        let x = self.value(rows);
        let a = self.value(scores);
        assert_eq!(a.shape(), (x.rows(), 1), "span_attention expects n × 1 scores");
        let mut out = Matrix::zeros(spans.len(), x.cols());
        let mut weights = Vec::with_capacity(spans.len());
        for (k, &(s, e)) in spans.iter().enumerate() {
            assert!(s <= e && e < x.rows(), "span_attention span out of range");
            let mx = (s..=e).map(|t| a.get(t, 0)).fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = (s..=e).map(|t| (a.get(t, 0) - mx).exp()).collect();
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= z);
            let row = out.row_mut(k);
            for (t, wt) in (s..=e).zip(&w) {
                for (o, v) in row.iter_mut().zip(x.row(t)) {
                    *o += wt * v;
                }
            }
            weights.push(w);
        }
        self.push(out, Op::SpanAttention(rows, scores, spans.to_vec(), weights))
    }

    /// A scalar node with value `value` and local gradients `∂value/∂input`.
    pub fn scalar_op(&mut self, value: f64, parts: Vec<(Var, Matrix)>) -> Var {
        for (v, g) in &parts {
            assert_eq!(self.shape(*v), g.shape(), "scalar_op gradient shape mismatch");
        }
        self.push(Matrix::filled(1, 1, value), Op::Scalar(parts))
    }

    /// Sum of several `1 × 1` nodes.
    pub fn add_scalars(&mut self, terms: &[Var]) -> Var {
        let parts = terms
            .iter()
            .map(|&t| (t, Matrix::filled(1, 1, 1.0)))
            .collect::<Vec<_>>();
        let value = terms.iter().map(|&t| self.scalar(t)).sum();
        self.scalar_op(value, parts)
    }

    /// Reverse pass from the scalar `output`; returns gradients for every
    /// parameter node reachable from it.
    pub fn backward(&self, output: Var) -> BTreeMap<ParamId, Matrix> {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = BTreeMap::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, delta: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.matmul_t(self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t_matmul(&g), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.matmul(self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, g.t_matmul(self.value(*a)), &mut grads);
                    }
                }
                Op::TMatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, self.value(*b).matmul_t(&g), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).matmul(&g), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::AddRow(a, b) => {
                    if self.ng(*b) {
                        let mut row = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (s, x) in row.iter_mut().zip(g.row(r)) {
                                *s += x;
                            }
                        }
                        acc(*b, Matrix::row_vector(row), &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, hadamard(&g, self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, hadamard(&g, self.value(*a)), &mut grads);
                    }
                }
                Op::Scale(a, s) => acc(*a, g.map(|x| x * s), &mut grads),
                Op::Dropout(a, mask) => acc(*a, hadamard(&g, mask), &mut grads),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = zip_map(&g, y, |gi, yi| gi * yi * (1.0 - yi));
                    acc(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = zip_map(&g, y, |gi, yi| gi * (1.0 - yi * yi));
                    acc(*a, d, &mut grads);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    acc(*a, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.ng(*p) {
                            acc(*p, g.slice_cols(start, w), &mut grads);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        if self.ng(*p) {
                            acc(*p, g.slice_rows(start, h), &mut grads);
                        }
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..g.rows() {
                        d.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    acc(*a, d, &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Gather(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for (i, &src) in idx.iter().enumerate() {
                        for (x, y) in d.row_mut(src).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::MaxRows(a, arg) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for (col, &row) in arg.iter().enumerate() {
                        d.set(row, col, g.get(0, col));
                    }
                    acc(*a, d, &mut grads);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    let n = r as f64;
                    for i in 0..r {
                        for (x, y) in d.row_mut(i).iter_mut().zip(g.row(0)) {
                            *x = y / n;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
                    let d = zip_map(&g, y, |gi, yi| yi * (gi - dot));
                    acc(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Matrix::filled(r, c, g.get(0, 0)), &mut grads);
                }
                Op::SpanAttention(rows, scores, spans, weights) => {
                    let x = self.value(*rows);
                    let out = &node.value;
                    let mut dx = Matrix::zeros(x.rows(), x.cols());
                    let mut da = Matrix::zeros(x.rows(), 1);
                    for (k, (&(s, _), w)) in spans.iter().zip(weights).enumerate() {
                        let gk = g.row(k);
                        let base: f64 = gk.iter().zip(out.row(k)).map(|(p, q)| p * q).sum();
                        for (off, &wt) in w.iter().enumerate() {
                            let t = s + off;
                            for (d, gv) in dx.row_mut(t).iter_mut().zip(gk) {
                                *d += wt * gv;
                            }
                            let dot: f64 = gk.iter().zip(x.row(t)).map(|(p, q)| p * q).sum();
                            da.data_mut()[t] += wt * (dot - base);
                        }
                    }
                    if self.ng(*rows) {
                        acc(*rows, dx, &mut grads);
                    }
                    if self.ng(*scores) {
                        acc(*scores, da, &mut grads);
                    }
                }
                Op::Scalar(parts) => {
                    let up = g.get(0, 0);
                    for (v, local) in parts {
                        acc(*v, local.map(|x| x * up), &mut grads);
                    }
                }
            }
        }
        out
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}
