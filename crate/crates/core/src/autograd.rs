//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so building a graph per
//! minibatch is cheap. [`Graph::backward`] walks the tape once and returns
//! parameter gradients plus gradients of any tracked inputs.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, gemm_block, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Attention masking. `Keys` marks which key positions may be attended.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnMask {
    None,
    /// Query `i` sees keys `j <= i + (keys - queries)`.
    Causal,
    Keys(Vec<bool>),
}

enum Value {
    Own(Matrix),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    MeanRows(Var),
    Dropout(Var, Vec<f64>),
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: f64, probs: Vec<Matrix> },
    PickSum(Var, Vec<usize>),
    FrobNorm(Var),
    WhereRows(Vec<bool>, Var, Var),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Result of a backward pass.
pub struct Backward {
    pub params: Grads,
    inputs: HashMap<usize, Matrix>,
}

impl Backward {
    /// Gradient with respect to a tracked input created by [`Graph::input`].
    pub fn input_grad(&self, v: Var) -> Option<&Matrix> {
        self.inputs.get(&v.0)
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: Option<ChaCha8Rng>,
}

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new(), training: false, rng: None }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new(), training: true, rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Own(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    /// Softmax probabilities saved by an attention node, one matrix per head.
    pub fn attention_probs(&self, v: Var) -> Option<&[Matrix]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Every probability matrix in the graph: softmax outputs, exponentiated
    /// log-softmax outputs and per-head attention weights.
    pub fn probability_tables(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.op {
                Op::SoftmaxRows(_) => out.push(self.value(Var(i)).clone()),
                Op::LogSoftmaxRows(_) => out.push(self.value(Var(i)).map(f64::exp)),
                Op::Attention { probs, .. } => out.extend(probs.iter().cloned()),
                _ => {}
            }
        }
        out
    }

    /// Outputs of every sigmoid node.
    pub fn sigmoid_outputs(&self) -> Vec<&Matrix> {
        self.nodes.iter().enumerate().filter(|(_, n)| matches!(n.op, Op::Sigmoid(_))).map(|(i, _)| self.value(Var(i))).collect()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Value::Own(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node { value: Value::Own(m), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Backward::input_grad`].
    pub fn input(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node { value: Value::Own(m), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(av.rows, bv.cols);
        gemm(1.0, av, false, bv, false, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(av.rows, bv.rows);
        gemm(1.0, av, false, bv, true, 0.0, &mut out);
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(av.rows, av.cols, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// `a + b` with the `1 × n` row `b` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((1, av.cols), bv.shape(), "add_row expects a 1 x cols bias");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (x, y) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    /// `a + b` with the `m × 1` column `b` broadcast over columns.
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, 1), bv.shape(), "add_col expects a rows x 1 bias");
        let mut out = av.clone();
        for r in 0..out.rows {
            let b = bv.data[r];
            for x in out.row_mut(r) {
                *x += b;
            }
        }
        self.push(out, Op::AddCol(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let n = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, n);
        let mut out = Matrix::zeros(xv.rows, n);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat.data[r * n + c] = h;
                out.data[r * n + c] = h * gv.data[c] + bv.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select_rows(idx);
        self.push(out, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, idx.len());
        for r in 0..av.rows {
            for (o, &c) in idx.iter().enumerate() {
                out.data[r * idx.len() + o] = av.get(r, c);
            }
        }
        self.push(out, Op::GatherCols(a, idx.to_vec()), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let out = Matrix::from_vec(rows, cols, av.data.clone());
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a), &[a])
    }

    /// Column means, `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows.max(1) as f64;
        out.scale_assign(1.0 / n);
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// Inverted dropout; the identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let n = self.value(a).len();
        let rng = self.rng.as_mut().expect("training graph carries an rng");
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let av = self.value(a);
        let data = av.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Dropout(a, mask), &[a])
    }

    /// Scaled dot-product attention over `heads` column blocks.
    ///
    /// `q` is `Tq × d`, `k` and `v` are `Tk × d`; the result is `Tq × d`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qv.shape();
        let tk = kv.rows;
        assert_eq!(kv.cols, d, "attention key width");
        assert_eq!(vv.shape(), (tk, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "model width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(tq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut s = Matrix::zeros(tq, tk);
            gemm_block(scale, &qv.data[off..], d, false, &kv.data[off..], d, true, 0.0, &mut s.data, tk, tq, dh, tk);
            for i in 0..tq {
                let row = s.row_mut(i);
                match mask {
                    AttnMask::None => {}
                    AttnMask::Causal => {
                        let limit = i + tk.saturating_sub(tq);
                        for x in row.iter_mut().skip(limit + 1) {
                            *x = f64::NEG_INFINITY;
                        }
                    }
                    AttnMask::Keys(keep) => {
                        for (x, &k) in row.iter_mut().zip(keep) {
                            if !k {
                                *x = f64::NEG_INFINITY;
                            }
                        }
                    }
                }
                softmax_in_place(row);
            }
            gemm_block(1.0, &s.data, tk, false, &vv.data[off..], d, false, 0.0, &mut out.data[off..], d, tq, tk, dh);
            probs.push(s);
        }
        self.push(out, Op::Attention { q, k, v, heads, scale, probs }, &[q, k, v])
    }

    /// `Σ_r a[r, idx[r]]` as a `1 × 1` scalar.
    pub fn pick_sum(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len(), "pick_sum needs one index per row");
        let s = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::PickSum(a, idx.to_vec()), &[a])
    }

    /// Frobenius norm as a `1 × 1` scalar.
    pub fn frobenius(&mut self, a: Var) -> Var {
        let n = self.value(a).sq_norm().sqrt();
        self.push(Matrix::from_vec(1, 1, vec![n]), Op::FrobNorm(a), &[a])
    }

    /// Row `r` of the result is row `r` of `a` where `cond[r]`, else of `b`.
    pub fn where_rows(&mut self, cond: &[bool], a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        assert_eq!(cond.len(), av.rows);
        let mut out = bv.clone();
        for (r, &c) in cond.iter().enumerate() {
            if c {
                out.row_mut(r).copy_from_slice(av.row(r));
            }
        }
        self.push(out, Op::WhereRows(cond.to_vec(), a, b), &[a, b])
    }

    /// Reverse pass from the `1 × 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Backward {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Backward { params: Grads::new(self.params.len()), inputs: HashMap::new() };
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads, &mut out);
        }
        out
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: Matrix, grads: &mut [Option<Matrix>], out: &mut Backward) {
        let y = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {
                out.inputs.insert(i, g);
            }
            Op::Param(id) => out.params.accumulate_owned(*id, g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Matrix::zeros(av.rows, av.cols);
                    gemm(1.0, &g, false, bv, true, 0.0, &mut da);
                    self.acc(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(bv.rows, bv.cols);
                    gemm(1.0, av, true, &g, false, 0.0, &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Matrix::zeros(av.rows, av.cols);
                    gemm(1.0, &g, false, bv, false, 0.0, &mut da);
                    self.acc(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(bv.rows, bv.cols);
                    gemm(1.0, &g, true, av, false, 0.0, &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *b, g.clone());
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, g.map(|x| -x));
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, Matrix::from_vec(g.rows, g.cols, d));
                }
                if self.needs(*b) {
                    let d = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, Matrix::from_vec(g.rows, g.cols, d));
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*b) {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in db.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.acc(grads, *b, db);
                }
                self.acc(grads, *a, g);
            }
            Op::AddCol(a, b) => {
                if self.needs(*b) {
                    let db = Matrix::from_vec(g.rows, 1, (0..g.rows).map(|r| g.row(r).iter().sum()).collect());
                    self.acc(grads, *b, db);
                }
                self.acc(grads, *a, g);
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => self.acc(grads, *a, g),
            Op::Tanh(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::Sigmoid(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::Relu(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gi, yi)| if *yi > 0.0 { *gi } else { 0.0 }).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, (gi, yi)) in d.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                        *o = yi * (gi - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let sum: f64 = gr.iter().sum();
                    for (o, (gi, yi)) in d.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                        *o = gi - yi.exp() * sum;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gv = self.value(*gamma);
                let n = g.cols;
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = Matrix::zeros(1, n);
                    let mut db = Matrix::zeros(1, n);
                    for r in 0..g.rows {
                        for c in 0..n {
                            dg.data[c] += g.get(r, c) * xhat.get(r, c);
                            db.data[c] += g.get(r, c);
                        }
                    }
                    self.acc(grads, *gamma, dg);
                    self.acc(grads, *beta, db);
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(g.rows, n);
                    let nf = n as f64;
                    for r in 0..g.rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..n {
                            let dh = g.get(r, c) * gv.data[c];
                            sum_d += dh;
                            sum_dx += dh * xhat.get(r, c);
                        }
                        for c in 0..n {
                            let dh = g.get(r, c) * gv.data[c];
                            dx.data[r * n + c] = inv_std[r] / nf * (nf * dh - sum_d - xhat.get(r, c) * sum_dx);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.needs(p) {
                        let mut d = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        self.acc(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows;
                    if self.needs(p) {
                        self.acc(grads, p, g.slice_rows(off, h));
                    }
                    off += h;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows, av.cols);
                d.data[start * av.cols..(start + g.rows) * av.cols].copy_from_slice(&g.data);
                self.acc(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    d.row_mut(r)[*start..start + g.cols].copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows, av.cols);
                for (o, &i) in idx.iter().enumerate() {
                    for (x, y) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                        *x += y;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::GatherCols(a, idx) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    for (o, &c) in idx.iter().enumerate() {
                        d.data[r * av.cols + c] += g.get(r, o);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, Matrix::from_vec(av.rows, av.cols, g.data));
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, Matrix::filled(av.rows, av.cols, g.data[0]));
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let n = av.rows.max(1) as f64;
                let mut d = Matrix::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    for (x, y) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *x = y / n;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::Dropout(a, mask) => {
                let d = g.data.iter().zip(mask).map(|(x, m)| x * m).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::Attention { q, k, v, heads, scale, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (tq, d) = qv.shape();
                let tk = kv.rows;
                let dh = d / heads;
                let mut dq = Matrix::zeros(tq, d);
                let mut dk = Matrix::zeros(tk, d);
                let mut dv = Matrix::zeros(tk, d);
                for (h, p) in probs.iter().enumerate() {
                    let off = h * dh;
                    // dV_h = Pᵀ dO_h
                    gemm_block(1.0, &p.data, tk, true, &g.data[off..], d, false, 0.0, &mut dv.data[off..], d, tk, tq, dh);
                    // dP = dO_h V_hᵀ
                    let mut dp = Matrix::zeros(tq, tk);
                    gemm_block(1.0, &g.data[off..], d, false, &vv.data[off..], d, true, 0.0, &mut dp.data, tk, tq, dh, tk);
                    for r in 0..tq {
                        let pr = p.row(r);
                        let dot: f64 = dp.row(r).iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (x, pi) in dp.row_mut(r).iter_mut().zip(pr) {
                            *x = pi * (*x - dot);
                        }
                    }
                    gemm_block(*scale, &dp.data, tk, false, &kv.data[off..], d, false, 0.0, &mut dq.data[off..], d, tq, tk, dh);
                    gemm_block(*scale, &dp.data, tk, true, &qv.data[off..], d, false, 0.0, &mut dk.data[off..], d, tk, tq, dh);
                }
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::PickSum(a, idx) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows, av.cols);
                for (r, &c) in idx.iter().enumerate() {
                    d.data[r * av.cols + c] += g.data[0];
                }
                self.acc(grads, *a, d);
            }
            Op::FrobNorm(a) => {
                let av = self.value(*a);
                let n = y.data[0];
                // subgradient 0 at the origin
                let s = if n > 0.0 { g.data[0] / n } else { 0.0 };
                self.acc(grads, *a, av.map(|x| x * s));
            }
            Op::WhereRows(cond, a, b) => {
                let mut da = Matrix::zeros(g.rows, g.cols);
                let mut db = Matrix::zeros(g.rows, g.cols);
                for (r, &c) in cond.iter().enumerate() {
                    if c {
                        da.row_mut(r).copy_from_slice(g.row(r));
                    } else {
                        db.row_mut(r).copy_from_slice(g.row(r));
                    }
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax; a row of all `-inf` becomes all zeros.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let eps = 1e-6;
        let mut out = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data[i] += eps;
            let mut m = x.clone();
            m.data[i] -= eps;
            out.data[i] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn check(inputs: &[Matrix], build: &dyn Fn(&mut Graph, &[Var]) -> Var) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let loss = build(&mut g, &vars);
        let back = g.backward(loss);
        for (k, x) in inputs.iter().enumerate() {
            let f = |xk: &Matrix| {
                let mut g = Graph::new(&store);
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, m)| g.input(if j == k { xk.clone() } else { m.clone() }))
                    .collect();
                let l = build(&mut g, &vars);
                g.scalar(l)
            };
            let num = numeric_grad(x, &f);
            let ana = back.input_grad(vars[k]).cloned().unwrap_or_else(|| Matrix::zeros(x.rows, x.cols));
            let err = num.max_abs_diff(&ana);
            assert!(err < 1e-6, "input {k}: max abs grad error {err}\nnum {num:?}\nana {ana:?}");
        }
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Weighted sum so every output entry contributes a distinct gradient.
    fn reduce(g: &mut Graph, v: Var, seed: u64) -> Var {
        let (r, c) = g.shape(v);
        let w = g.constant(rand_matrix(r, c, seed));
        let p = g.mul(v, w);
        g.sum_all(p)
    }

    #[test]
    fn matmul_family_grads() {
        let a = rand_matrix(3, 4, 1);
        let b = rand_matrix(4, 2, 2);
        let c = rand_matrix(5, 4, 3);
        check(&[a.clone(), b], &|g, v| {
            let y = g.matmul(v[0], v[1]);
            reduce(g, y, 9)
        });
        check(&[a, c], &|g, v| {
            let y = g.matmul_t(v[0], v[1]);
            reduce(g, y, 9)
        });
    }

    #[test]
    fn elementwise_grads() {
        let a = rand_matrix(3, 4, 4);
        let b = rand_matrix(3, 4, 5);
        let row = rand_matrix(1, 4, 6);
        let col = rand_matrix(3, 1, 7);
        check(&[a.clone(), b.clone()], &|g, v| {
            let s = g.sub(v[0], v[1]);
            let m = g.mul(s, v[1]);
            let t = g.tanh(m);
            let sg = g.sigmoid(v[0]);
            let o = g.one_minus(sg);
            let y = g.add(t, o);
            reduce(g, y, 11)
        });
        check(&[a.clone(), row], &|g, v| {
            let y = g.add_row(v[0], v[1]);
            let y = g.relu(y);
            reduce(g, y, 12)
        });
        check(&[a, col], &|g, v| {
            let y = g.add_col(v[0], v[1]);
            let y = g.scale(y, 0.7);
            reduce(g, y, 13)
        });
    }

    #[test]
    fn softmax_and_layer_norm_grads() {
        let a = rand_matrix(3, 5, 20);
        let gamma = rand_matrix(1, 5, 21);
        let beta = rand_matrix(1, 5, 22);
        check(&[a.clone()], &|g, v| {
            let y = g.softmax_rows(v[0]);
            reduce(g, y, 23)
        });
        check(&[a.clone()], &|g, v| {
            let y = g.log_softmax_rows(v[0]);
            g.pick_sum(y, &[0, 4, 2])
        });
        check(&[a, gamma, beta], &|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
            reduce(g, y, 24)
        });
    }

    #[test]
    fn shape_ops_grads() {
        let a = rand_matrix(4, 3, 30);
        let b = rand_matrix(4, 2, 31);
        let c = rand_matrix(2, 3, 32);
        check(&[a.clone(), b], &|g, v| {
            let y = g.concat_cols(&[v[0], v[1]]);
            let y = g.slice_cols(y, 1, 3);
            reduce(g, y, 33)
        });
        check(&[a.clone(), c], &|g, v| {
            let y = g.concat_rows(&[v[0], v[1], v[0]]);
            let y = g.slice_rows(y, 2, 5);
            let y = g.gather_rows(y, &[0, 4, 4, 1]);
            let y = g.transpose(y);
            let y = g.reshape(y, 2, 6);
            let y = g.gather_cols(y, &[5, 0, 5]);
            reduce(g, y, 34)
        });
        check(&[a.clone()], &|g, v| {
            let m = g.mean_rows(v[0]);
            let n = g.frobenius(v[0]);
            let s = reduce(g, m, 35);
            g.add(s, n)
        });
        let b2 = rand_matrix(4, 3, 36);
        check(&[a, b2], &|g, v| {
            let y = g.where_rows(&[true, false, false, true], v[0], v[1]);
            reduce(g, y, 37)
        });
    }

    #[test]
    fn attention_grads_all_masks() {
        let q = rand_matrix(3, 4, 40);
        let k = rand_matrix(3, 4, 41);
        let v = rand_matrix(3, 4, 42);
        for mask in [AttnMask::None, AttnMask::Causal, AttnMask::Keys(vec![true, false, true])] {
            check(&[q.clone(), k.clone(), v.clone()], &|g, x| {
                let y = g.attention(x[0], x[1], x[2], 2, &mask);
                reduce(g, y, 43)
            });
        }
        let k5 = rand_matrix(5, 4, 44);
        let v5 = rand_matrix(5, 4, 45);
        check(&[q, k5, v5], &|g, x| {
            let y = g.attention(x[0], x[1], x[2], 1, &AttnMask::Causal);
            reduce(g, y, 46)
        });
    }

    #[test]
    fn attention_probs_rows_sum_to_one_and_respect_causality() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(rand_matrix(4, 6, 50));
        let y = g.attention(x, x, x, 3, &AttnMask::Causal);
        for p in g.attention_probs(y).unwrap() {
            for r in 0..4 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for c in r + 1..4 {
                    assert_eq!(p.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_training() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Matrix::filled(2, 3, 1.0));
        assert_eq!(g.dropout(x, 0.5), x);

        let run = || {
            let mut g = Graph::training(&store, ChaCha8Rng::seed_from_u64(3));
            let x = g.constant(Matrix::filled(8, 8, 1.0));
            let y = g.dropout(x, 0.5);
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.data.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn param_vars_are_memoized_and_grads_accumulate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::row_vector(vec![2.0]));
        let mut g = Graph::new(&store);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let y = g.mul(a, b);
        let back = g.backward(y);
        assert_eq!(back.params.get(id).unwrap().data, vec![4.0]);
    }
}
