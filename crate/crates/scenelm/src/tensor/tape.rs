//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! return lightweight [`Var`] handles; [`Tape::backward`] replays recorded
//! backward rules in reverse order and accumulates gradients into every
//! `requires_grad` leaf. Repeated backward calls accumulate.

use super::kernels;
use crate::error::TensorError;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Primitive kinds accepted by the generic [`Tape::forward_primitive`]
/// dispatcher. Operations needing extra arguments (embedding lookup, slicing,
/// attention) have dedicated methods instead.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Multiply,
    Relu,
    LayerNorm,
    Softmax,
    Concat,
    Sigmoid,
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm(Var, Vec<(f32, f32)>),
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize, len: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, causal: bool, offset: usize, probs: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<f32> },
    Bce { probs: Var, targets: Vec<f32>, mask: Vec<f32> },
    MeanAll(Var),
    SumAll(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    name: Option<String>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Interprets a shape as (rows, cols) over the last axis.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let cols = *shape.last().unwrap();
            (numel(shape) / cols, cols)
        }
    }
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

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, grad: None, requires_grad, name: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Var, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                detail: format!("shape {:?} implies {} elements, got {}", shape, numel(shape), data.len()),
            });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    /// Leaf tied to a named parameter; gradients are exported by name.
    pub fn param(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<Var, TensorError> {
        let v = self.leaf(shape, data, true)?;
        self.nodes[v.0].name = Some(name.to_string());
        Ok(v)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Result<Var, TensorError> {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, v: f32) -> Var {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    /// Generic primitive dispatcher for uniform-signature operations.
    pub fn forward_primitive(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, TensorError> {
        let need = |n: usize| -> Result<(), TensorError> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(TensorError::ShapeMismatch {
                    op: "forward_primitive",
                    detail: format!("{:?} expects {} inputs, got {}", kind, n, inputs.len()),
                })
            }
        };
        match kind {
            OpKind::Matmul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Multiply => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Relu => {
                need(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Sigmoid => {
                need(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::LayerNorm => {
                need(1)?;
                Ok(self.layer_norm(inputs[0]))
            }
            OpKind::Softmax => {
                need(1)?;
                Ok(self.softmax(inputs[0]))
            }
            OpKind::Concat => self.concat_rows(inputs),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}: inner dimensions must agree", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a), self.value(b), &mut out, false);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            // row broadcast: [r, c] + [c]
            let (_, c) = rows_cols(&sa);
            if sb.len() == 1 && sb[0] == c && sa.len() >= 2 {
                return self.add_row(a, b);
            }
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        let out: Vec<f32> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(sa, out, rg, Op::Add(a, b)))
    }

    /// [rows, c] + bias [c]
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let (rows, c) = rows_cols(&sa);
        if self.shape(bias) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", sa, self.shape(bias)),
            });
        }
        let mut out = self.value(a).to_vec();
        let b = self.value(bias).to_vec();
        for r in 0..rows {
            for j in 0..c {
                out[r * c + j] += b[j];
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(bias);
        Ok(self.push(sa, out, rg, Op::AddRow(a, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            let (_, c) = rows_cols(&sa);
            if sb.len() == 1 && sb[0] == c && sa.len() >= 2 {
                return self.mul_row(a, b);
            }
            return Err(TensorError::ShapeMismatch {
                op: "multiply",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        let out: Vec<f32> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(sa, out, rg, Op::Mul(a, b)))
    }

    /// [rows, c] * scale [c]
    pub fn mul_row(&mut self, a: Var, scale: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let (rows, c) = rows_cols(&sa);
        if self.shape(scale) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                detail: format!("{:?} * {:?}", sa, self.shape(scale)),
            });
        }
        let mut out = self.value(a).to_vec();
        let s = self.value(scale).to_vec();
        for r in 0..rows {
            for j in 0..c {
                out[r * c + j] *= s[j];
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(scale);
        Ok(self.push(sa, out, rg, Op::MulRow(a, scale)))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let rg = self.requires_grad(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Sigmoid(a))
    }

    /// Pre-affine layer normalization over the last axis.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        let mut out = vec![0.0; rows * cols];
        let stats = kernels::layer_norm_rows(self.value(a), rows, cols, &mut out);
        let rg = self.requires_grad(a);
        self.push(shape, out, rg, Op::LayerNorm(a, stats))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        let mut out = vec![0.0; rows * cols];
        kernels::softmax_rows(self.value(a), rows, cols, &mut out);
        let rg = self.requires_grad(a);
        self.push(shape, out, rg, Op::Softmax(a))
    }

    /// Gathers rows of `table` [v, d] at `ids`, yielding [ids.len(), d].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding_lookup",
                detail: format!("table must be 2-d, got {:?}", st),
            });
        }
        let (v, d) = (st[0], st[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange { op: "embedding_lookup", index: id, bound: v });
            }
            out.extend_from_slice(&self.value(table)[id * d..(id + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(vec![ids.len(), d], out, rg, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch { op: "concat", detail: "no inputs".into() });
        }
        let cols = rows_cols(self.shape(parts[0])).1;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("column mismatch: {} vs {}", cols, c),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
            rg |= self.requires_grad(p);
        }
        Ok(self.push(vec![rows, cols], out, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = rows_cols(self.shape(src));
        if start + len > rows {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                detail: format!("rows {}..{} out of {}", start, start + len, rows),
            });
        }
        let out = self.value(src)[start * cols..(start + len) * cols].to_vec();
        let rg = self.requires_grad(src);
        Ok(self.push(vec![len, cols], out, rg, Op::SliceRows { src, start, len }))
    }

    /// Multi-head scaled dot-product attention with optional causal mask.
    /// `offset` is the absolute position of the first query row.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        offset: usize,
    ) -> Result<Var, TensorError> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 2 || sk.len() != 2 || sk != sv || sq[1] != sk[1] || sq[1] % heads != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                detail: format!("q {:?}, k {:?}, v {:?}, heads {}", sq, sk, sv, heads),
            });
        }
        let (lq, d, lk) = (sq[0], sq[1], sk[0]);
        let mut out = vec![0.0; lq * d];
        let probs = kernels::attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            lq,
            lk,
            d,
            heads,
            causal,
            offset,
            &mut out,
        );
        let rg = self.requires_grad(q) || self.requires_grad(k) || self.requires_grad(v);
        Ok(self.push(vec![lq, d], out, rg, Op::Attention { q, k, v, heads, causal, offset, probs }))
    }

    /// Masked mean of per-row cross-entropy: logits [rows, v], one target id
    /// per row, `mask` weights rows (0 excludes). Returns a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[f32]) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        let (rows, v) = rows_cols(&s);
        if targets.len() != rows || mask.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} rows, {} targets, {} mask entries", rows, targets.len(), mask.len()),
            });
        }
        let total: f32 = mask.iter().sum();
        if total <= 0.0 {
            return Err(TensorError::EmptyReduction { op: "cross_entropy" });
        }
        let mut loss = 0.0;
        for r in 0..rows {
            if mask[r] == 0.0 {
                continue;
            }
            let t = targets[r];
            if t >= v {
                return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: t, bound: v });
            }
            let row = &self.value(logits)[r * v..(r + 1) * v];
            loss += mask[r] * (kernels::log_sum_exp(row) - row[t]);
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            vec![1],
            vec![loss / total],
            rg,
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec() },
        ))
    }

    /// Single-row convenience: -log softmax(logits)[target].
    pub fn cross_entropy_single(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        self.cross_entropy(logits, &[target], &[1.0])
    }

    pub const BCE_EPS: f32 = 1e-7;

    /// Masked mean binary cross-entropy over probabilities in (0,1).
    /// Probabilities are clamped to [eps, 1-eps] before the logs.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[f32], mask: &[f32]) -> Result<Var, TensorError> {
        let n = self.value(probs).len();
        if targets.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "binary_cross_entropy",
                detail: format!("{} probs, {} targets, {} mask entries", n, targets.len(), mask.len()),
            });
        }
        let total: f32 = mask.iter().sum();
        if total <= 0.0 {
            return Err(TensorError::EmptyReduction { op: "binary_cross_entropy" });
        }
        let mut loss = 0.0;
        for i in 0..n {
            if mask[i] == 0.0 {
                continue;
            }
            let p = self.value(probs)[i].clamp(Self::BCE_EPS, 1.0 - Self::BCE_EPS);
            let t = targets[i];
            loss -= mask[i] * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
        let rg = self.requires_grad(probs);
        Ok(self.push(
            vec![1],
            vec![loss / total],
            rg,
            Op::Bce { probs, targets: targets.to_vec(), mask: mask.to_vec() },
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let m = self.value(a).iter().sum::<f32>() / n as f32;
        let rg = self.requires_grad(a);
        self.push(vec![1], vec![m], rg, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum::<f32>();
        let rg = self.requires_grad(a);
        self.push(vec![1], vec![s], rg, Op::SumAll(a))
    }

    fn add_grad(&mut self, v: Var, delta: &[f32]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let g = self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn take_out_grad(&self, idx: usize) -> Option<Vec<f32>> {
        self.nodes[idx].grad.clone()
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across repeated calls; use a fresh tape (or zero leaf grads) to reset.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        self.add_grad(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dout) = self.take_out_grad(idx) else { continue };
            // Clear this node's grad before propagating so a second backward
            // call does not double-count interior nodes; leaves keep theirs.
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].grad = None;
            }
            self.propagate(idx, &dout);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, dout: &[f32]) {
        // Temporarily move the op out to satisfy the borrow checker.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = &self.nodes[a.0].shape;
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].shape[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_bt(m, n, k, dout, &self.nodes[b.0].value, &mut da, false);
                    self.add_grad(*a, &da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_at(k, m, n, &self.nodes[a.0].value, dout, &mut db, false);
                    self.add_grad(*b, &db);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(*a, dout);
                self.add_grad(*b, dout);
            }
            Op::AddRow(a, bias) => {
                self.add_grad(*a, dout);
                if self.requires_grad(*bias) {
                    let c = self.nodes[bias.0].value.len();
                    let mut db = vec![0.0; c];
                    for (i, d) in dout.iter().enumerate() {
                        db[i % c] += d;
                    }
                    self.add_grad(*bias, &db);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let da: Vec<f32> = dout.iter().zip(&self.nodes[b.0].value).map(|(d, y)| d * y).collect();
                    self.add_grad(*a, &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<f32> = dout.iter().zip(&self.nodes[a.0].value).map(|(d, x)| d * x).collect();
                    self.add_grad(*b, &db);
                }
            }
            Op::MulRow(a, scale) => {
                let c = self.nodes[scale.0].value.len();
                if self.requires_grad(*a) {
                    let s = &self.nodes[scale.0].value;
                    let da: Vec<f32> = dout.iter().enumerate().map(|(i, d)| d * s[i % c]).collect();
                    self.add_grad(*a, &da);
                }
                if self.requires_grad(*scale) {
                    let x = &self.nodes[a.0].value;
                    let mut ds = vec![0.0; c];
                    for (i, d) in dout.iter().enumerate() {
                        ds[i % c] += d * x[i];
                    }
                    self.add_grad(*scale, &ds);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<f32> = dout.iter().map(|d| d * c).collect();
                self.add_grad(*a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f32> = dout
                    .iter()
                    .zip(&self.nodes[a.0].value)
                    .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                    .collect();
                self.add_grad(*a, &da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let da: Vec<f32> = dout.iter().zip(y).map(|(d, &s)| d * s * (1.0 - s)).collect();
                self.add_grad(*a, &da);
            }
            Op::LayerNorm(a, stats) => {
                let shape = self.nodes[idx].shape.clone();
                let (rows, cols) = rows_cols(&shape);
                let y = &self.nodes[idx].value;
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (_, inv_std) = stats[r];
                    let yr = &y[r * cols..(r + 1) * cols];
                    let dr = &dout[r * cols..(r + 1) * cols];
                    let mean_d = dr.iter().sum::<f32>() / cols as f32;
                    let mean_dy = dr.iter().zip(yr).map(|(d, v)| d * v).sum::<f32>() / cols as f32;
                    let dst = &mut da[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dst[c] = inv_std * (dr[c] - mean_d - yr[c] * mean_dy);
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::Softmax(a) => {
                let shape = self.nodes[idx].shape.clone();
                let (rows, cols) = rows_cols(&shape);
                let y = &self.nodes[idx].value;
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let dr = &dout[r * cols..(r + 1) * cols];
                    let dot = dr.iter().zip(yr).map(|(d, v)| d * v).sum::<f32>();
                    let dst = &mut da[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dst[c] = yr[c] * (dr[c] - dot);
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::Embedding { table, ids } => {
                if self.requires_grad(*table) {
                    let d = self.nodes[table.0].shape[1];
                    let vlen = self.nodes[table.0].value.len();
                    let mut dt = vec![0.0; vlen];
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += dout[row * d + c];
                        }
                    }
                    self.add_grad(*table, &dt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    let slice = dout[off..off + n].to_vec();
                    self.add_grad(p, &slice);
                    off += n;
                }
            }
            Op::SliceRows { src, start, len } => {
                if self.requires_grad(*src) {
                    let cols = rows_cols(&self.nodes[src.0].shape).1;
                    let n = self.nodes[src.0].value.len();
                    let mut ds = vec![0.0; n];
                    ds[start * cols..(start + len) * cols].copy_from_slice(&dout[..len * cols]);
                    self.add_grad(*src, &ds);
                }
            }
            Op::Attention { q, k, v, heads, causal, offset, probs } => {
                let d = self.nodes[q.0].shape[1];
                let lq = self.nodes[q.0].shape[0];
                let lk = self.nodes[k.0].shape[0];
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dv = vec![0.0; lk * d];
                kernels::attention_backward(
                    &self.nodes[q.0].value,
                    &self.nodes[k.0].value,
                    &self.nodes[v.0].value,
                    probs,
                    dout,
                    lq,
                    lk,
                    d,
                    *heads,
                    *causal,
                    *offset,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                self.add_grad(*q, &dq);
                self.add_grad(*k, &dk);
                self.add_grad(*v, &dv);
            }
            Op::CrossEntropy { logits, targets, mask } => {
                if self.requires_grad(*logits) {
                    let s = self.nodes[logits.0].shape.clone();
                    let (rows, v) = rows_cols(&s);
                    let total: f32 = mask.iter().sum();
                    let mut dl = vec![0.0; rows * v];
                    let mut sm = vec![0.0; v];
                    for r in 0..rows {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        let row = &self.nodes[logits.0].value[r * v..(r + 1) * v];
                        kernels::softmax_slice(row, &mut sm);
                        let w = dout[0] * mask[r] / total;
                        let dst = &mut dl[r * v..(r + 1) * v];
                        for c in 0..v {
                            dst[c] = w * sm[c];
                        }
                        dst[targets[r]] -= w;
                    }
                    self.add_grad(*logits, &dl);
                }
            }
            Op::Bce { probs, targets, mask } => {
                if self.requires_grad(*probs) {
                    let total: f32 = mask.iter().sum();
                    let p = &self.nodes[probs.0].value;
                    let mut dp = vec![0.0; p.len()];
                    for i in 0..p.len() {
                        if mask[i] == 0.0 {
                            continue;
                        }
                        let pc = p[i].clamp(Self::BCE_EPS, 1.0 - Self::BCE_EPS);
                        dp[i] = dout[0] * mask[i] / total * (pc - targets[i]) / (pc * (1.0 - pc));
                    }
                    self.add_grad(*probs, &dp);
                }
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len();
                let da = vec![dout[0] / n as f32; n];
                self.add_grad(*a, &da);
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.len();
                let da = vec![dout[0]; n];
                self.add_grad(*a, &da);
            }
        }
        self.nodes[idx].op = op;
    }

    /// Accumulates gradients of named parameter leaves into `sink`.
    pub fn export_grads(&self, mut sink: impl FnMut(&str, &[f32])) {
        for node in &self.nodes {
            if let (Some(name), Some(grad)) = (&node.name, &node.grad) {
                sink(name, grad);
            }
        }
    }
}
