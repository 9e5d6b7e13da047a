//! Dense row-major matrices, a CSR sparse matrix, and a small reverse-mode
//! tape covering exactly the operations the graph models need.
//!
//! Every public operation checks shapes and rejects non-finite results, so a
//! diverging optimizer surfaces as an error instead of silently poisoning a
//! checkpoint.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("class index {index} out of range for {classes} logits")]
    TargetOutOfRange { index: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        let t = Tensor2 { rows, cols, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor2::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFiniteValue { op })
        }
    }

    fn same_shape(&self, other: &Tensor2, op: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            })
        }
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    fn t_matmul(&self, other: &Tensor2) -> Tensor2 {
        debug_assert_eq!(self.rows, other.rows);
        let n = other.cols;
        let mut out = Tensor2::zeros(self.cols, n);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ` without materializing the transpose.
    fn matmul_t(&self, other: &Tensor2) -> Tensor2 {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        let out = Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite("add")?;
        Ok(out)
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&self, bias: &Tensor2) -> Result<Tensor2> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        out.check_finite("add_row")?;
        Ok(out)
    }

    pub fn relu(&self) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Column-wise mean, a `1 × cols` row.
    pub fn row_mean(&self) -> Result<Tensor2> {
        let mut out = Tensor2::zeros(1, self.cols);
        if self.rows == 0 {
            return Ok(out);
        }
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.data.iter_mut().for_each(|v| *v *= inv);
        out.check_finite("row_mean")?;
        Ok(out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&self) -> Tensor2 {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Compressed sparse row matrix with constant values (never differentiated).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < rows && c < cols,
                "triplet ({r}, {c}) outside {rows}x{cols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.data[r * self.cols + c] += v;
            }
        }
        out
    }

    pub fn matmul(&self, dense: &Tensor2) -> Result<Tensor2> {
        if self.cols != dense.rows {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_matmul",
                left: (self.rows, self.cols),
                right: dense.shape(),
            });
        }
        let n = dense.cols;
        let mut out = Tensor2::zeros(self.rows, n);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (o, &d) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += v * d;
                }
            }
        }
        out.check_finite("sparse_matmul")?;
        Ok(out)
    }

    /// `selfᵀ · dense`.
    fn t_matmul(&self, dense: &Tensor2) -> Tensor2 {
        let n = dense.cols;
        let mut out = Tensor2::zeros(self.cols, n);
        for r in 0..self.rows {
            let d_row = dense.row(r);
            for (c, v) in self.row_entries(r) {
                let out_row = &mut out.data[c * n..(c + 1) * n];
                for (o, &d) in out_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
        out
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    RowMean(Var),
    SparseMatMul(&'a CsrMatrix, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor2,
        targets: Vec<usize>,
        weights: Vec<f64>,
        weight_sum: f64,
    },
}

struct Node<'a> {
    value: Tensor2,
    op: Op<'a>,
}

/// Records forward operations so [`Tape::backward`] can accumulate gradients.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid reverse topological order.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor2> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor2> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor2, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor2 {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a))
    }

    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).row_mean()?;
        Ok(self.push(v, Op::RowMean(a)))
    }

    pub fn sparse_matmul(&mut self, adjacency: &'a CsrMatrix, a: Var) -> Result<Var> {
        let v = adjacency.matmul(self.value(a))?;
        Ok(self.push(v, Op::SparseMatMul(adjacency, a)))
    }

    /// Weighted mean cross-entropy of row-wise softmax against class targets.
    /// Produces a `1 × 1` scalar.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || weights.len() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: lv.shape(),
                right: (targets.len(), weights.len()),
            });
        }
        let probs = lv.softmax();
        let weight_sum: f64 = weights.iter().sum();
        let mut loss = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t >= probs.cols() {
                return Err(TensorError::TargetOutOfRange {
                    index: t,
                    classes: probs.cols(),
                });
            }
            // log-softmax computed directly for stability
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += w * (lse - row[t]);
        }
        let loss = Tensor2::from_vec(1, 1, vec![loss / weight_sum]).map_err(|_| {
            TensorError::NonFiniteValue {
                op: "softmax_cross_entropy",
            }
        })?;
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                weight_sum,
            },
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_shape = self.value(output).shape();
        let mut seed = Tensor2::zeros(out_shape.0, out_shape.1);
        seed.data.iter_mut().for_each(|v| *v = 1.0);
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = upstream.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&upstream);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, upstream.clone());
                    accumulate(&mut grads, *b, upstream.clone());
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Tensor2::zeros(1, upstream.cols());
                    for row in upstream.data.chunks(upstream.cols().max(1)) {
                        for (g, u) in gb.data.iter_mut().zip(row) {
                            *g += u;
                        }
                    }
                    accumulate(&mut grads, *a, upstream.clone());
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(a) => {
                    let mut g = upstream.clone();
                    for (gv, &x) in g.data.iter_mut().zip(&self.value(*a).data) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::RowMean(a) => {
                    let src = self.value(*a);
                    let mut g = Tensor2::zeros(src.rows(), src.cols());
                    let inv = 1.0 / src.rows().max(1) as f64;
                    for row in g.data.chunks_mut(src.cols().max(1)) {
                        for (gv, u) in row.iter_mut().zip(&upstream.data) {
                            *gv = u * inv;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::SparseMatMul(adj, a) => {
                    accumulate(&mut grads, *a, adj.t_matmul(&upstream));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    targets,
                    weights,
                    weight_sum,
                } => {
                    let scale = upstream.data[0] / weight_sum;
                    let mut g = probs.clone();
                    let cols = g.cols();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = &mut g.data[i * cols..(i + 1) * cols];
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= w * scale);
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
            grads[idx] = Some(upstream);
        }
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], var: Var, g: Tensor2) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(&g.data) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
