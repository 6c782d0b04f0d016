use crate::tensor::gemm;
use crate::{AutodiffError, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    SumAll(Var),
    RowSums(Var),
    ColSums(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax {
        x: Var,
        tau: f64,
    },
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        group: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    IndexSelect {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    GroupMatMul {
        x: Var,
        left: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations.
///
/// Nodes are appended in creation order, which is a topological order, so the
/// backward pass is a single reverse sweep. A graph built with
/// [`Graph::inference`] never tracks gradients and skips saving adjoint state.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Sum with four independent accumulators, which breaks the add latency chain.
fn lane_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut lanes = [0.0; 4];
    for (i, v) in xs.enumerate() {
        lanes[i & 3] += v;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: None,
            track: true,
        }
    }

    /// A graph that records values only; leaves never require gradients.
    pub fn inference() -> Self {
        Self {
            track: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.track;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(v.0))
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let requires_grad = self.track && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = x.zip_map(y, |p, q| p + q);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = x.zip_map(y, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = x.zip_map(y, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let out = gemm(x, false, y, false);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                left: x.shape(),
                right: (1, x.cols()),
            });
        }
        let out = Tensor::from_fn(rows, x.cols(), |_, c| x.get(0, c));
        self.push("broadcast_rows", out, Op::BroadcastRows(a), &[a])
    }

    /// Repeats an `r x 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_cols",
                left: x.shape(),
                right: (x.rows(), 1),
            });
        }
        let out = Tensor::from_fn(x.rows(), cols, |r, _| x.get(r, 0));
        self.push("broadcast_cols", out, Op::BroadcastCols(a), &[a])
    }

    /// `x + bias` with a `1 x c` bias added to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (xt, bt) = (self.value(x), self.value(bias));
        if bt.rows() != 1 || bt.cols() != xt.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: xt.shape(),
                right: bt.shape(),
            });
        }
        let mut data = Vec::with_capacity(xt.rows() * xt.cols());
        let brow = bt.data();
        for r in 0..xt.rows() {
            data.extend(xt.row_slice(r).iter().zip(brow).map(|(a, b)| a + b));
        }
        let out = Tensor::from_parts(xt.rows(), xt.cols(), data);
        self.push("add_row", out, Op::AddRow(x, bias), &[x, bias])
    }

    /// Sum of all entries as a `1x1` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Per-row sums, `r x c -> r x 1`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let out = Tensor::column((0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect());
        self.push("row_sums", out, Op::RowSums(a), &[a])
    }

    /// Per-column sums, `r x c -> 1 x c`.
    pub fn col_sums(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let mut out = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        self.push("col_sums", Tensor::row(out), Op::ColSums(a), &[a])
    }

    /// Elementwise absolute value. The adjoint at exactly zero is zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(f64::abs);
        self.push("abs", out, Op::Abs(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    /// Softmax of every row of `x / tau`, stabilized by subtracting the row maximum.
    pub fn row_softmax(&mut self, a: Var, tau: f64) -> Result<Var> {
        self.check(a)?;
        if !tau.is_finite() || tau <= 0.0 {
            return Err(AutodiffError::InvalidArgument {
                op: "row_softmax",
                reason: format!("temperature must be positive, got {tau}"),
            });
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = ((v - max) / tau).exp();
                out.set(r, c, e);
                total += e;
            }
            for c in 0..x.cols() {
                out.set(r, c, out.get(r, c) / total);
            }
        }
        self.push("row_softmax", out, Op::RowSoftmax { x: a, tau }, &[a])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut data = Vec::with_capacity(x.rows() * x.cols());
        let mut rstd = Vec::with_capacity(x.rows());
        let mut centered = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let mean = lane_sum(row.iter().copied()) / n;
            for (c, v) in centered.iter_mut().zip(row) {
                *c = v - mean;
            }
            let var = lane_sum(centered.iter().map(|c| c * c)) / n;
            let s = 1.0 / (var + eps).sqrt();
            data.extend(centered.iter().map(|c| c * s));
            rstd.push(s);
        }
        let out = Tensor::from_parts(x.rows(), x.cols(), data);
        if !self.track {
            rstd.clear();
        }
        self.push("layer_norm", out, Op::LayerNorm { x: a, rstd }, &[a])
    }

    /// Multi-head scaled dot-product self-attention applied independently to
    /// consecutive blocks of `group` rows.
    ///
    /// `q`, `k`, `v` share the shape `(blocks * group) x d` and `d` must be a
    /// multiple of `heads`. Head `h` uses columns `h*d/heads .. (h+1)*d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        self.check(q)?;
        self.check(k)?;
        self.check(v)?;
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", qt, kt)?;
        same_shape("attention", qt, vt)?;
        let (rows, d) = qt.shape();
        if group == 0 || rows % group != 0 || heads == 0 || d % heads != 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "attention",
                reason: format!("{rows}x{d} input with group {group} and {heads} heads"),
            });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let blocks = rows / group;
        let keep = self.track;
        let mut probs = vec![0.0; if keep { blocks * heads * group * group } else { group }];
        let mut out = Tensor::zeros(rows, d);
        let mut scores = vec![0.0; group];
        // Keys of the current block and head, transposed to `dh x group` so the
        // score loop runs contiguously over keys.
        let mut keys_t = vec![0.0; dh * group];
        let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
        let od = out.data_mut();
        for b in 0..blocks {
            for h in 0..heads {
                let off = h * dh;
                for j in 0..group {
                    let kj = &kd[(b * group + j) * d + off..][..dh];
                    for (t, &x) in kj.iter().enumerate() {
                        keys_t[t * group + j] = x * scale;
                    }
                }
                for i in 0..group {
                    let qi = &qd[(b * group + i) * d + off..][..dh];
                    scores.fill(0.0);
                    for (t, &x) in qi.iter().enumerate() {
                        for (s, &y) in scores.iter_mut().zip(&keys_t[t * group..(t + 1) * group]) {
                            *s += x * y;
                        }
                    }
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let at = if keep { ((b * heads + h) * group + i) * group } else { 0 };
                    let p = &mut probs[at..][..group];
                    let inv = 1.0 / total;
                    for (pj, s) in p.iter_mut().zip(&scores) {
                        *pj = s * inv;
                    }
                    let orow = &mut od[(b * group + i) * d + off..][..dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vd[(b * group + j) * d + off..][..dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        if !self.track {
            probs.clear();
        }
        let op = Op::Attention {
            q,
            k,
            v,
            group,
            heads,
            probs,
        };
        self.push("attention", out, op, &[q, k, v])
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::InvalidArgument {
                op: "concat_cols",
                reason: "nothing to concatenate".into(),
            });
        };
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Gathers rows of `a` in the given order; indices may repeat.
    pub fn index_select(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(AutodiffError::InvalidArgument {
                op: "index_select",
                reason: format!("row {bad} out of range for {} rows", x.rows()),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * x.cols());
        for &r in rows {
            data.extend_from_slice(x.row_slice(r));
        }
        let out = Tensor::new(rows.len(), x.cols(), data)?;
        let op = Op::IndexSelect {
            x: a,
            rows: rows.to_vec(),
        };
        self.push("index_select", out, op, &[a])
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if x.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: x.shape(),
                right: (rows, cols),
            });
        }
        let out = x.reshape(rows, cols)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Applies the constant `left` (`r x group`) to every consecutive block of
    /// `group` rows of `x`, producing `blocks * r` rows: a batched `left * x_b`.
    pub fn group_matmul(&mut self, left: &Tensor, x: Var) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let (r, group) = left.shape();
        let (rows, d) = xt.shape();
        if group == 0 || rows % group != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "group_matmul",
                left: left.shape(),
                right: xt.shape(),
            });
        }
        let blocks = rows / group;
        let mut out = Tensor::zeros(blocks * r, d);
        let (xd, ld) = (xt.data(), left.data());
        for b in 0..blocks {
            for i in 0..r {
                let orow = &mut out.data_mut()[(b * r + i) * d..][..d];
                for j in 0..group {
                    let w = ld[i * group + j];
                    if w == 0.0 {
                        continue;
                    }
                    let xrow = &xd[(b * group + j) * d..][..d];
                    for (o, v) in orow.iter_mut().zip(xrow) {
                        *o += w * v;
                    }
                }
            }
        }
        let op = Op::GroupMatMul { x, left: left.clone() };
        self.push("group_matmul", out, op, &[x])
    }

    /// Reverse sweep from a `1x1` loss. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NotScalar { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
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

    /// Gradient of the last backward loss with respect to `v`. Nodes the loss does
    /// not depend on get zeros.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        self.check(v)?;
        let grads = self.grads.as_ref().ok_or(AutodiffError::NoBackward)?;
        Ok(match grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(y, |p, q| p * q));
                self.accumulate(grads, *b, g.zip_map(x, |p, q| p * q));
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, gemm(g, false, self.value(*b), true));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::AddRow(x, bias) => {
                if self.nodes[bias.0].requires_grad {
                    let mut acc = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (o, v) in acc.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::row(acc));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::BroadcastRows(a) => {
                let mut acc = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (o, v) in acc.iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, Tensor::row(acc));
            }
            Op::BroadcastCols(a) => {
                let acc = (0..g.rows()).map(|r| g.row_slice(r).iter().sum()).collect();
                self.accumulate(grads, *a, Tensor::column(acc));
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::ColSums(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |_, j| g.get(0, j)));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let sign = |v: f64| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.accumulate(grads, *a, g.zip_map(x, |p, v| p * sign(v)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |p, v| if v > 0.0 { p } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, g.zip_map(y, |p, s| p * s * (1.0 - s)));
            }
            Op::RowSoftmax { x, tau } => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, yr[c] * (gr[c] - dot) / tau);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let n = y.cols() as f64;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for (r, &rs) in rstd.iter().enumerate() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..y.cols() {
                        dx.set(r, c, rs * (gr[c] - mean_g - yr[c] * mean_gy));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = self.attention_adjoint(g, *q, *k, *v, *group, *heads, probs);
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.nodes[p.0].requires_grad {
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(r, c, data));
                    }
                    offset += c;
                }
            }
            Op::IndexSelect { x, rows } => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for (out_row, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        let cur = dx.get(src, j);
                        dx.set(src, j, cur + g.get(out_row, j));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                let dx = g.reshape(r, c).expect("reshape adjoint keeps length");
                self.accumulate(grads, *a, dx);
            }
            Op::GroupMatMul { x, left } => {
                let (rows, d) = self.shape(*x);
                let (r, group) = left.shape();
                let mut dx = Tensor::zeros(rows, d);
                let (gd, ld) = (g.data(), left.data());
                for b in 0..rows / group {
                    for i in 0..r {
                        let grow = &gd[(b * r + i) * d..][..d];
                        for j in 0..group {
                            let w = ld[i * group + j];
                            if w == 0.0 {
                                continue;
                            }
                            let xrow = &mut dx.data_mut()[(b * group + j) * d..][..d];
                            for (o, v) in xrow.iter_mut().zip(grow) {
                                *o += w * v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_adjoint(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        group: usize,
        heads: usize,
        probs: &[f64],
    ) -> (Tensor, Tensor, Tensor) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = qt.shape();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let blocks = rows / group;
        let mut dq = Tensor::zeros(rows, d);
        let mut dk = Tensor::zeros(rows, d);
        let mut dv = Tensor::zeros(rows, d);
        let mut dp = vec![0.0; group];
        let (qd, kd, vd, gd) = (qt.data(), kt.data(), vt.data(), g.data());
        for b in 0..blocks {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..group {
                    let p = &probs[((b * heads + h) * group + i) * group..][..group];
                    let gi = &gd[(b * group + i) * d + off..][..dh];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        let vj = &vd[(b * group + j) * d + off..][..dh];
                        *dpj = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let dvj = &mut dv.data_mut()[(b * group + j) * d + off..][..dh];
                        for (o, x) in dvj.iter_mut().zip(gi) {
                            *o += p[j] * x;
                        }
                    }
                    let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let qi = &qd[(b * group + i) * d + off..][..dh];
                    for j in 0..group {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kd[(b * group + j) * d + off..][..dh];
                        let dqi = &mut dq.data_mut()[(b * group + i) * d + off..][..dh];
                        for (o, x) in dqi.iter_mut().zip(kj) {
                            *o += ds * x;
                        }
                        let dkj = &mut dk.data_mut()[(b * group + j) * d + off..][..dh];
                        for (o, x) in dkj.iter_mut().zip(qi) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), Some(0.5));
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), Some(0.25));
    }

    #[test]
    fn uniform_softmax_for_equal_inputs() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.0; 3]));
        let y = g.row_softmax(x, 1.0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(2, 3, |r, c| (r + c) as f64));
        let s = g.sum_all(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), Tensor::ones(2, 3));
    }

    #[test]
    fn abs_subgradient_zero_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![-2.0, 0.0, 3.0]));
        let a = g.abs(x).unwrap();
        let s = g.sum_all(a).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap();
        let s = g.sum_all(z).unwrap();
        g.backward(s).unwrap();
        // d/dx 2x^2 = 4x
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 2));
        assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(g.matmul(a, a), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(g.backward(a), Err(AutodiffError::NotScalar { .. })));
        assert!(matches!(g.grad(a), Err(AutodiffError::NoBackward)));
        assert!(g.row_softmax(a, 0.0).is_err());
        let big = g.constant(Tensor::scalar(1e300));
        assert!(matches!(g.mul(big, big), Err(AutodiffError::NonFinite { op: "mul" })));
        assert!(g.index_select(a, &[2]).is_err());
        assert!(g.attention(a, a, a, 2, 2).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let c = g.constant(Tensor::row(vec![3.0, 4.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.grad(c).unwrap().data(), &[0.0, 0.0]);
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn inference_graph_tracks_nothing() {
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let y = g.layer_norm(x, 1e-5).unwrap();
        assert!(!g.requires_grad(y));
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_token_attention_returns_values() {
        let mut g = Graph::new();
        let q = g.leaf(Tensor::row(vec![0.3, -1.0, 2.0, 0.5]));
        let k = g.leaf(Tensor::row(vec![1.0, 1.0, -1.0, 0.0]));
        let v = g.leaf(Tensor::row(vec![5.0, 6.0, 7.0, 8.0]));
        let out = g.attention(q, k, v, 1, 2).unwrap();
        assert_eq!(g.value(out).data(), &[5.0, 6.0, 7.0, 8.0]);
    }
}
