use std::sync::Arc;

use super::{Tensor, TensorError};

/// Epsilon inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which entries of a score matrix may receive attention weight.
///
/// Disallowed entries get exactly zero probability in [`Tape::row_softmax_masked`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self, TensorError> {
        if allowed.len() != rows * cols {
            return Err(TensorError::InvalidArgument(format!(
                "mask [{rows}, {cols}] needs {} flags, got {}",
                rows * cols,
                allowed.len()
            )));
        }
        for r in 0..rows {
            if !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a) {
                return Err(TensorError::InvalidArgument(format!("mask row {r} allows no column")));
            }
        }
        Ok(Self { rows, cols, allowed })
    }

    /// Lower-triangular mask: position `i` sees positions `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        Self { rows: n, cols: n, allowed }
    }

    /// Block-diagonal mask over `groups` consecutive runs of `size` rows.
    pub fn block_diagonal(groups: usize, size: usize) -> Self {
        let n = groups * size;
        let allowed = (0..n * n).map(|k| (k / n) / size == (k % n) / size).collect();
        Self { rows: n, cols: n, allowed }
    }

    /// Query `i` sees only keys `i*size .. (i+1)*size`.
    pub fn grouped_keys(queries: usize, size: usize) -> Self {
        let cols = queries * size;
        let allowed = (0..queries * cols).map(|k| (k % cols) / size == k / cols).collect();
        Self { rows: queries, cols, allowed }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Pick(Var, Vec<usize>),
    CosineRows(Var, Var),
    Sum(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] walks it once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when no path reaches it.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
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

    pub fn shared_value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value: Arc::new(value), op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("leaf", value, Op::Leaf)
    }

    /// Records a leaf that shares storage with the caller (parameters).
    pub fn shared_leaf(&mut self, value: Arc<Tensor>) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, op: Op::Leaf });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul_t(self.value(b))?;
        self.push("matmul_t", out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds the `1 × c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tb));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(k, x)| x + tb.data()[k % c]).collect();
        let out = Tensor::new(ta.rows(), c, data)?;
        self.push("add_row", out, Op::AddRow(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push("scale", out, Op::Scale(a, s))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if start > end || end > ta.cols() {
            return Err(TensorError::InvalidArgument(format!(
                "column slice {start}..{end} out of range for shape {:?}",
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::new(ta.rows(), end - start, data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    /// Row gather; as an embedding lookup `table` is `vocab × d` and
    /// `indices` are token ids.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= t.rows() {
                return Err(TensorError::InvalidArgument(format!("row index {i} out of range for {} rows", t.rows())));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(indices.len(), t.cols(), data)?;
        self.push("gather_rows", out, Op::GatherRows(table, indices.to_vec()))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.gather_rows(table, ids)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = softmax_rows(self.value(a), None);
        self.push("row_softmax", out, Op::Softmax(a))
    }

    pub fn row_softmax_masked(&mut self, a: Var, mask: &Mask) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if mask.shape() != ta.shape() {
            return Err(TensorError::ShapeMismatch { op: "row_softmax_masked", left: ta.shape(), right: mask.shape() });
        }
        let out = softmax_rows(ta, Some(mask));
        self.push("row_softmax", out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len());
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::new(ta.rows(), c, data)?;
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (`1 × c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.shape() != [1, c] || tb.shape() != [1, c] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                data.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(tx.rows(), c, data)?;
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push("relu", out, Op::Relu(a))
    }

    /// `Σ_r −log softmax(logits_r)[targets_r]` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        if targets.len() != tl.rows() {
            return Err(TensorError::InvalidArgument(format!(
                "{} targets for {} rows of logits",
                targets.len(),
                tl.rows()
            )));
        }
        let probs = softmax_rows(tl, None);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= tl.cols() {
                return Err(TensorError::InvalidArgument(format!("target {t} out of range")));
            }
            let row = tl.row(r);
            loss += log_sum_exp(row) - row[t];
        }
        let probs = probs.into_data();
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Column `indices[r]` of each row `r`, as an `r × 1` tensor.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if indices.len() != ta.rows() {
            return Err(TensorError::InvalidArgument(format!("{} indices for {} rows", indices.len(), ta.rows())));
        }
        let mut data = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= ta.cols() {
                return Err(TensorError::InvalidArgument(format!("column {i} out of range")));
            }
            data.push(ta.at(r, i));
        }
        let out = Tensor::new(indices.len(), 1, data)?;
        self.push("pick", out, Op::Pick(a, indices.to_vec()))
    }

    /// Cosine similarity of matching rows, as an `r × 1` tensor.
    /// Rows with zero norm give 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("cosine_rows", ta, tb));
        }
        let data = (0..ta.rows()).map(|r| super::cosine(ta.row(r), tb.row(r))).collect();
        let out = Tensor::new(ta.rows(), 1, data)?;
        self.push("cosine_rows", out, Op::CosineRows(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(TensorError::NotScalar { shape: lv.shape() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), TensorError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b))?;
                let gb = self.value(*a).t_matmul(g)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulT(a, b) => {
                let ga = g.matmul(self.value(*b))?;
                let gb = g.t_matmul(self.value(*a))?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for (k, v) in g.data().iter().enumerate() {
                    gb[k % c] += v;
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, Tensor::new(1, c, gb)?);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga)?);
                accumulate(grads, *b, Tensor::new(g.rows(), g.cols(), gb)?);
            }
            Op::Scale(a, s) => {
                let ga = g.data().iter().map(|x| x * s).collect();
                accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga)?);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    accumulate(grads, p, Tensor::new(r, c, slice)?);
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut data = Vec::with_capacity(g.rows() * c);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    accumulate(grads, p, Tensor::new(g.rows(), c, data)?);
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(table, indices) => {
                let tt = self.value(*table);
                let mut gt = Tensor::zeros(tt.rows(), tt.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (d, s) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::Softmax(a) => {
                let mut ga = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (y, dy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    ga.extend(y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)));
                }
                accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga)?);
            }
            Op::LogSoftmax(a) => {
                let mut ga = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (y, dy) = (out.row(r), g.row(r));
                    let total: f64 = dy.iter().sum();
                    ga.extend(y.iter().zip(dy).map(|(yi, di)| di - yi.exp() * total));
                }
                accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let c = g.cols();
                let gam = self.value(*gamma).data();
                let mut gx = Vec::with_capacity(g.len());
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..g.rows() {
                    let dy = g.row(r);
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..c {
                        gg[j] += dy[j] * xh[j];
                        gbeta[j] += dy[j];
                        let d = dy[j] * gam[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    let k = inv_std[r] / c as f64;
                    for j in 0..c {
                        let d = dy[j] * gam[j];
                        gx.push(k * (c as f64 * d - sum_d - xh[j] * sum_dx));
                    }
                }
                accumulate(grads, *x, Tensor::new(g.rows(), c, gx)?);
                accumulate(grads, *gamma, Tensor::new(1, c, gg)?);
                accumulate(grads, *beta, Tensor::new(1, c, gbeta)?);
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let ga = g.data().iter().zip(ta.data()).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect();
                accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga)?);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = g.item()?;
                let tl = self.value(*logits);
                let c = tl.cols();
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] -= scale;
                }
                accumulate(grads, *logits, Tensor::new(tl.rows(), c, gl)?);
            }
            Op::Pick(a, indices) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                let c = ta.cols();
                for (r, &i) in indices.iter().enumerate() {
                    ga.data_mut()[r * c + i] += g.data()[r];
                }
                accumulate(grads, *a, ga);
            }
            Op::CosineRows(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for r in 0..ta.rows() {
                    let (x, y) = (ta.row(r), tb.row(r));
                    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let cos = out.data()[r];
                    let d = g.data()[r];
                    for j in 0..c {
                        ga[r * c + j] = d * (y[j] / (nx * ny) - cos * x[j] / (nx * nx));
                        gb[r * c + j] = d * (x[j] / (nx * ny) - cos * y[j] / (ny * ny));
                    }
                }
                accumulate(grads, *a, Tensor::new(ta.rows(), c, ga)?);
                accumulate(grads, *b, Tensor::new(tb.rows(), c, gb)?);
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                accumulate(grads, *a, Tensor::filled(ta.rows(), ta.cols(), g.item()?));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax_rows(t: &Tensor, mask: Option<&Mask>) -> Tensor {
    let c = t.cols();
    let mut out = Tensor::zeros(t.rows(), c);
    for r in 0..t.rows() {
        let row = t.row(r);
        let allowed = |j: usize| mask.is_none_or(|m| m.allows(r, j));
        let max = (0..c).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(r);
        let mut total = 0.0;
        for j in 0..c {
            if allowed(j) {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    out
}
