//! Eager tape: every op computes its value immediately and records how to
//! push gradients back to its inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::nn::tensor::{matmul, matmul_at, matmul_bt, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const L2_NORM_EPS: f64 = 1e-12;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout enabled, driven by a seeded stream so runs are reproducible.
    Train { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Tensor),
    Param(&'p Tensor),
}

impl Value<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Param(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Gather { x: Var, cells: Vec<(usize, usize)> },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    Dropout { x: Var, keep: Vec<f64> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    ClampMin { x: Var, min: f64 },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// A computation recorded against a borrowed parameter store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    rng: Option<ChaCha8Rng>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode) -> Self {
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], mode, rng }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.tensor()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        let t = if t.shape().len() == 2 { t } else { Tensor::matrix(t.rows(), t.cols(), t.into_data()).expect("same size") };
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, v: f64) -> Var {
        self.input(Tensor::filled(rows, cols, v))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store;
        self.nodes.push(Node { value: Value::Param(store.get(id)), op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Same value, but cut from the gradient tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&mut self, op: &'static str, a: Var, row: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let ((r, c), (one, c2)) = (self.shape(a), self.shape(row));
        if one != 1 || c != c2 {
            return Err(Error::shape(op, format!("{r}x{c} with row {one}x{c2}")));
        }
        let (av, rv) = (self.value(a).data(), self.value(row).data());
        let data = av.iter().enumerate().map(|(k, &x)| f(x, rv[k % c])).collect();
        Tensor::matrix(r, c, data)
    }

    /// `a + 1·row`: adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        Ok(self.push(t, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        Ok(self.push(t, Op::MulRow(a, row), &[a, row]))
    }

    /// Scales row `i` of `a` by `col[i]` where `col` is `r x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let ((r, c), (r2, one)) = (self.shape(a), self.shape(col));
        if one != 1 || r != r2 {
            return Err(Error::shape("mul_col", format!("{r}x{c} with column {r2}x{one}")));
        }
        let (av, cv) = (self.value(a).data(), self.value(col).data());
        let data = av.iter().enumerate().map(|(k, &x)| x * cv[k / c.max(1)]).collect();
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(softplus);
        self.push(t, Op::Softplus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    /// Row softmax. `mask`, when given, is added to the logits first; `-inf`
    /// entries come out as exactly zero. A fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        if let Some(m) = mask {
            if dims(m) != (r, c) {
                return Err(Error::shape("softmax_rows", format!("mask {:?} for {r}x{c}", m.shape())));
            }
            data.iter_mut().zip(m.data()).for_each(|(x, &mv)| *x += mv);
        }
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::SoftmaxRows(a), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::matrix(r, c, data).expect("same size");
        self.push(t, Op::LogSoftmaxRows(a), &[a])
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in data.chunks_mut(c.max(1)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let t = Tensor::matrix(r, c, data).expect("same size");
        self.push(t, Op::LayerNormRows { x: a, inv_std }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        parts.iter().for_each(|&p| data.extend_from_slice(self.value(p).data()));
        let rows = data.len() / cols.max(1);
        let rows = if cols == 0 { parts.iter().map(|&p| self.shape(p).0).sum() } else { rows };
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let src = self.value(a);
        let data = (0..r).flat_map(|i| src.row_slice(i)[start..start + len].to_vec()).collect();
        let t = Tensor::matrix(r, len, data)?;
        Ok(self.push(t, Op::SliceCols { x: a, start }, &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::matrix(len, c, data)?;
        Ok(self.push(t, Op::SliceRows { x: a, start }, &[a]))
    }

    /// Rows of `a` picked (with repetition allowed) by `index`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(a);
        let data = index.iter().flat_map(|&i| src.row_slice(i).to_vec()).collect();
        let t = Tensor::matrix(index.len(), c, data)?;
        Ok(self.push(t, Op::GatherRows { x: a, index: index.to_vec() }, &[a]))
    }

    /// Individual cells collected into a `1 x k` row.
    pub fn gather(&mut self, a: Var, cells: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(bad) = cells.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::shape("gather", format!("cell {bad:?} of {r}x{c}")));
        }
        let src = self.value(a);
        let data = cells.iter().map(|&(i, j)| src.get(i, j)).collect();
        let t = Tensor::matrix(1, cells.len(), data)?;
        Ok(self.push(t, Op::Gather { x: a, cells: cells.to_vec() }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Column means: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            out.iter_mut().zip(self.value(a).row_slice(i)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r.max(1) as f64);
        self.push(Tensor::row(&out), Op::MeanRows(a), &[a])
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, _) = self.shape(a);
        let data = (0..r).map(|i| self.value(a).row_slice(i).iter().sum()).collect();
        self.push(Tensor::matrix(r, 1, data).expect("sized"), Op::SumCols(a), &[a])
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let Some(rng) = self.rng.as_mut() else { return a };
        let keep_scale = 1.0 / (1.0 - rate);
        let n = self.nodes[a.0].value.tensor().len();
        let keep: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale }).collect();
        let t = self.value(a).zip_map(&Tensor::new(self.value(a).shape().to_vec(), keep.clone()).expect("sized"), |x, k| x * k);
        self.push(t, Op::Dropout { x: a, keep }, &[a])
    }

    /// Divides each row by its L2 norm (floored at a tiny epsilon).
    pub fn normalize_rows_l2(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        let mut norms = Vec::with_capacity(r);
        for row in data.chunks_mut(c.max(1)) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let t = Tensor::matrix(r, c, data).expect("sized");
        self.push(t, Op::NormalizeRows { x: a, norms }, &[a])
    }

    /// `max(x, min)`, with gradient only where the input is above the floor.
    pub fn clamp_min(&mut self, a: Var, min: f64) -> Var {
        let t = self.value(a).map(|x| x.max(min));
        self.push(t, Op::ClampMin { x: a, min }, &[a])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::Numeric("backward on a node that was never recorded".into()));
        }
        if self.value(out).len() != 1 {
            return Err(Error::shape("backward", format!("output must be scalar, got {:?}", self.shape(out))));
        }
        self.backward_with(out, Tensor::scalar(1.0))
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::Numeric("backward on a node that was never recorded".into()));
        }
        if seed.len() != self.value(out).len() {
            return Err(Error::shape("backward", "seed gradient shape differs from output"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor::new(self.value(out).shape().to_vec(), seed.into_data())?);
        let mut result = Gradients::new(self.store.len());
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads, &mut result);
        }
        Ok(result)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>], result: &mut Gradients) {
        let node = &self.nodes[idx];
        let y = node.value.tensor();
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| self.value(v);
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => result.accumulate(*id, g),
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.shape(*a), self.shape(*b));
                if self.nodes[a.0].needs_grad {
                    let da = matmul_bt(gd, val(*b).data(), m, n, k);
                    send(*a, Tensor::matrix(m, k, da).expect("sized"));
                }
                if self.nodes[b.0].needs_grad {
                    let db = matmul_at(val(*a).data(), gd, m, k, n);
                    send(*b, Tensor::matrix(k, n, db).expect("sized"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                send(*b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                send(*row, column_sums(g));
            }
            Op::MulRow(a, row) => {
                let c = g.cols();
                let rv = val(*row).data();
                let da = gd.iter().enumerate().map(|(k, &gv)| gv * rv[k % c]).collect();
                send(*a, Tensor::new(g.shape().to_vec(), da).expect("sized"));
                let prod = g.zip_map(val(*a), |gv, av| gv * av);
                send(*row, column_sums(&prod));
            }
            Op::MulCol(a, col) => {
                let c = g.cols().max(1);
                let cv = val(*col).data();
                let da = gd.iter().enumerate().map(|(k, &gv)| gv * cv[k / c]).collect();
                send(*a, Tensor::new(g.shape().to_vec(), da).expect("sized"));
                let av = val(*a).data();
                let dc = (0..g.rows()).map(|i| (0..g.cols()).map(|j| gd[i * c + j] * av[i * c + j]).sum()).collect();
                send(*col, Tensor::matrix(g.rows(), 1, dc).expect("sized"));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x))),
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => send(*a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Exp(a) => send(*a, g.zip_map(y, |gv, e| gv * e)),
            Op::SoftmaxRows(a) => {
                let c = y.cols().max(1);
                let mut d = vec![0.0; gd.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    dr.iter_mut().zip(yr.iter().zip(gr)).for_each(|(o, (p, gv))| *o = p * (gv - dot));
                }
                send(*a, Tensor::new(y.shape().to_vec(), d).expect("sized"));
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols().max(1);
                let mut d = vec![0.0; gd.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                    let gsum: f64 = gr.iter().sum();
                    dr.iter_mut().zip(yr.iter().zip(gr)).for_each(|(o, (ly, gv))| *o = gv - ly.exp() * gsum);
                }
                send(*a, Tensor::new(y.shape().to_vec(), d).expect("sized"));
            }
            Op::LayerNormRows { x, inv_std } => {
                let c = y.cols().max(1);
                let n = c as f64;
                let mut d = vec![0.0; gd.len()];
                for (i, ((dr, yr), gr)) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)).enumerate() {
                    let gmean = gr.iter().sum::<f64>() / n;
                    let gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
                    dr.iter_mut()
                        .zip(yr.iter().zip(gr))
                        .for_each(|(o, (yv, gv))| *o = inv_std[i] * (gv - gmean - yv * gy));
                }
                send(*x, Tensor::new(y.shape().to_vec(), d).expect("sized"));
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    let data = (0..rows).flat_map(|r| g.row_slice(r)[offset..offset + pc].to_vec()).collect();
                    send(p, Tensor::matrix(rows, pc, data).expect("sized"));
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pr = self.shape(p).0;
                    send(p, Tensor::matrix(pr, c, gd[offset * c..(offset + pr) * c].to_vec()).expect("sized"));
                    offset += pr;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.shape(*x);
                let w = g.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                send(*x, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.shape(*x);
                let mut d = vec![0.0; r * c];
                d[start * c..start * c + gd.len()].copy_from_slice(gd);
                send(*x, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::GatherRows { x, index } => {
                let (r, c) = self.shape(*x);
                let mut d = vec![0.0; r * c];
                for (k, &i) in index.iter().enumerate() {
                    d[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)).for_each(|(o, v)| *o += v);
                }
                send(*x, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::Gather { x, cells } => {
                let (r, c) = self.shape(*x);
                let mut d = vec![0.0; r * c];
                for (k, &(i, j)) in cells.iter().enumerate() {
                    d[i * c + j] += gd[k];
                }
                send(*x, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::Sum(a) => {
                let t = val(*a);
                send(*a, Tensor::new(t.shape().to_vec(), vec![gd[0]; t.len()]).expect("sized"));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let v = gd[0] / t.len().max(1) as f64;
                send(*a, Tensor::new(t.shape().to_vec(), vec![v; t.len()]).expect("sized"));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let d = (0..r * c).map(|k| gd[k % c.max(1)] / r as f64).collect();
                send(*a, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let d = (0..r * c).map(|k| gd[k / c.max(1)]).collect();
                send(*a, Tensor::matrix(r, c, d).expect("sized"));
            }
            Op::Dropout { x, keep } => {
                let d = gd.iter().zip(keep).map(|(g, k)| g * k).collect();
                send(*x, Tensor::new(g.shape().to_vec(), d).expect("sized"));
            }
            Op::NormalizeRows { x, norms } => {
                let c = y.cols().max(1);
                let mut d = vec![0.0; gd.len()];
                for (i, ((dr, yr), gr)) in d.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)).enumerate() {
                    if norms[i] <= L2_NORM_EPS {
                        dr.iter_mut().zip(gr).for_each(|(o, gv)| *o = gv / L2_NORM_EPS);
                        continue;
                    }
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dr.iter_mut().zip(yr.iter().zip(gr)).for_each(|(o, (yv, gv))| *o = (gv - yv * dot) / norms[i]);
                }
                send(*x, Tensor::new(y.shape().to_vec(), d).expect("sized"));
            }
            Op::ClampMin { x, min } => send(*x, g.zip_map(val(*x), |gv, xv| if xv > *min { gv } else { 0.0 })),
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        out.iter_mut().zip(g.row_slice(r)).for_each(|(o, v)| *o += v);
    }
    Tensor::row(&out)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
