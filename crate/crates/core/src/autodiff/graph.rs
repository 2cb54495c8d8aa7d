use std::sync::Arc;

use super::kernels;
use super::Tensor;
use crate::{par, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Probabilities below this are clamped before taking the log in
/// [`Graph::softmax_cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerical epsilon added to variances in [`Graph::batch_norm`].
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    SoftmaxLast(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMax {
        x: Var,
        /// Source row per output element, `usize::MAX` for empty segments.
        arg: Vec<usize>,
    },
    SegmentSoftmax(Var, Arc<[usize]>),
    KernelAggregate {
        x: Var,
        weights: Arc<[f64]>,
        m: usize,
        offsets: Arc<[usize]>,
    },
    Concat(Vec<Var>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    MaxPoolChannels {
        x: Var,
        arg: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Arc<[Option<usize>]>,
        weights: Arc<[f64]>,
        probs: Vec<f64>,
        norm: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Append-only computation graph with reverse-mode differentiation.
///
/// Inputs of a node always precede it, so reverse insertion order is a valid
/// topological order for [`Graph::backward`].
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    mode: Mode,
}

fn shape_err(op: &'static str, msg: String) -> Error {
    Error::invalid(op, msg)
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            batch_stats: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            batch_stats: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            batch_stats: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Batch mean and variance recorded by a training-mode batch norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        self.nodes[v.0]
            .batch_stats
            .as_ref()
            .map(|(m, s)| (m.as_slice(), s.as_slice()))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dims {k} vs {k2}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let out = kernels::transpose(self.value(a).data(), m, n);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), &[a]))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, node, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row", a)?;
        if self.value(bias).len() != n {
            return Err(shape_err(
                "add_row",
                format!("bias of {} for {n} columns", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    /// Softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let d = *t
            .shape()
            .last()
            .ok_or_else(|| shape_err("softmax_lastdim", "scalar input".into()))?;
        let mut data = t.data().to_vec();
        if d > 0 {
            par::for_each_chunk(&mut data, d, |_, row| softmax_in_place(row));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::SoftmaxLast(a), &[a]))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let t = self.value(a);
        let (rows, d) = (t.rows(), t.cols());
        if t.shape().is_empty() {
            return Err(shape_err("gather_rows", "scalar input".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for {rows} rows"),
            ));
        }
        let data = kernels::gather_rows(t.data(), d, &idx);
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        Ok(self.push(Tensor::new(shape, data)?, Op::GatherRows(a, idx), &[a]))
    }

    fn check_offsets(&self, op: &'static str, a: Var, offsets: &[usize]) -> Result<()> {
        let rows = self.value(a).rows();
        if offsets.first() != Some(&0)
            || offsets.last() != Some(&rows)
            || offsets.windows(2).any(|w| w[1] < w[0])
        {
            return Err(shape_err(
                op,
                format!("offsets must rise monotonically from 0 to {rows}"),
            ));
        }
        Ok(())
    }

    /// Sums consecutive row segments: output row `i` adds rows
    /// `offsets[i]..offsets[i + 1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: impl Into<Arc<[usize]>>) -> Result<Var> {
        let offsets: Arc<[usize]> = offsets.into();
        self.check_offsets("segment_sum", a, &offsets)?;
        let d = self.value(a).cols();
        let data = kernels::segment_sum(self.value(a).data(), d, &offsets);
        let mut shape = self.shape(a).to_vec();
        shape[0] = offsets.len() - 1;
        Ok(self.push(Tensor::new(shape, data)?, Op::SegmentSum(a, offsets), &[a]))
    }

    /// Column-wise maximum over each row segment; empty segments give zero.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        self.check_offsets("segment_max", a, offsets)?;
        let t = self.value(a);
        let d = t.cols();
        let n = offsets.len() - 1;
        let mut data = vec![0.0; n * d];
        let mut arg = vec![usize::MAX; n * d];
        for i in 0..n {
            for e in offsets[i]..offsets[i + 1] {
                for c in 0..d {
                    let v = t.data()[e * d + c];
                    let o = i * d + c;
                    if arg[o] == usize::MAX || v > data[o] {
                        data[o] = v;
                        arg[o] = e;
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = n;
        Ok(self.push(Tensor::new(shape, data)?, Op::SegmentMax { x: a, arg }, &[a]))
    }

    /// Column-wise softmax within each row segment.
    pub fn segment_softmax(&mut self, a: Var, offsets: impl Into<Arc<[usize]>>) -> Result<Var> {
        let offsets: Arc<[usize]> = offsets.into();
        self.check_offsets("segment_softmax", a, &offsets)?;
        let (_, d) = self.dims2("segment_softmax", a)?;
        let mut data = self.value(a).data().to_vec();
        let mut col = Vec::new();
        for i in 0..offsets.len() - 1 {
            let (s, e) = (offsets[i], offsets[i + 1]);
            if s == e {
                continue;
            }
            for c in 0..d {
                col.clear();
                col.extend((s..e).map(|r| data[r * d + c]));
                softmax_in_place(&mut col);
                for (r, v) in (s..e).zip(&col) {
                    data[r * d + c] = *v;
                }
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::SegmentSoftmax(a, offsets), &[a]))
    }

    /// Weighted segment aggregation used by kernel-point convolution.
    ///
    /// With `x` of shape `E x d` and constant `weights` of shape `E x m`,
    /// output row `i` has `m * d` columns:
    /// `out[i, k*d + c] = sum_{e in segment i} weights[e, k] * x[e, c]`.
    pub fn kernel_aggregate(
        &mut self,
        x: Var,
        weights: impl Into<Arc<[f64]>>,
        m: usize,
        offsets: impl Into<Arc<[usize]>>,
    ) -> Result<Var> {
        let weights: Arc<[f64]> = weights.into();
        let offsets: Arc<[usize]> = offsets.into();
        self.check_offsets("kernel_aggregate", x, &offsets)?;
        let (e_rows, d) = self.dims2("kernel_aggregate", x)?;
        if weights.len() != e_rows * m {
            return Err(shape_err(
                "kernel_aggregate",
                format!("{} weights for {e_rows} rows x {m} kernels", weights.len()),
            ));
        }
        let n = offsets.len() - 1;
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * m * d];
        if m * d > 0 {
            par::for_each_chunk(&mut out, m * d, |i, row| {
                for e in offsets[i]..offsets[i + 1] {
                    let xe = &xs[e * d..(e + 1) * d];
                    for k in 0..m {
                        let w = weights[e * m + k];
                        if w == 0.0 {
                            continue;
                        }
                        for (o, v) in row[k * d..(k + 1) * d].iter_mut().zip(xe) {
                            *o += w * v;
                        }
                    }
                }
            });
        }
        let value = Tensor::new(vec![n, m * d], out)?;
        Ok(self.push(
            value,
            Op::KernelAggregate {
                x,
                weights,
                m,
                offsets,
            },
            &[x],
        ))
    }

    /// Concatenates matrices with equal row counts along the columns.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_lastdim", "no inputs".into()));
        }
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_lastdim", p)?;
            if *rows.get_or_insert(r) != r {
                return Err(shape_err("concat_lastdim", "row counts differ".into()));
            }
            widths.push(c);
        }
        let rows = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::Concat(parts.to_vec()),
            parts,
        ))
    }

    /// Per-channel normalisation over the rows of `x`.
    ///
    /// In training mode the batch statistics are used (and recorded, see
    /// [`Graph::batch_stats`]); in inference mode `running` mean and variance
    /// are used, making the op a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
    ) -> Result<Var> {
        let (n, c) = self.dims2("batch_norm", x)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).len() != c {
                return Err(shape_err(
                    "batch_norm",
                    format!("{name} has {} entries for {c} channels", self.value(v).len()),
                ));
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(shape_err("batch_norm", "running stats width mismatch".into()));
        }
        let training = self.mode == Mode::Training;
        let xs = self.value(x).data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            if n > 0 {
                for row in xs.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for row in xs.chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
            }
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                let h = (xs[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let v = self.push(
            Tensor::new(vec![n, c], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
        );
        if training {
            self.nodes[v.0].batch_stats = Some((mean, var));
        }
        Ok(v)
    }

    /// Non-overlapping max over channel pairs: `N x C -> N x C/2`.
    pub fn max_pool_channels(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.dims2("max_pool_channels", x)?;
        if c % 2 != 0 {
            return Err(shape_err(
                "max_pool_channels",
                format!("channel count {c} is odd"),
            ));
        }
        let xs = self.value(x).data();
        let h = c / 2;
        let mut out = vec![0.0; n * h];
        let mut arg = vec![0; n * h];
        for i in 0..n {
            for j in 0..h {
                let a = i * c + 2 * j;
                let (k, v) = if xs[a + 1] > xs[a] { (a + 1, xs[a + 1]) } else { (a, xs[a]) };
                out[i * h + j] = v;
                arg[i * h + j] = k;
            }
        }
        Ok(self.push(
            Tensor::new(vec![n, h], out)?,
            Op::MaxPoolChannels { x, arg },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshaped(shape).map_err(|_| {
            shape_err("reshape", format!("cannot reshape {:?}", self.shape(x)))
        })?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Weighted mean negative log-likelihood of `labels` under
    /// `softmax(logits)`:
    /// `-(1/N) sum_i w_i log(max(p_{i,label_i}, PROB_FLOOR))`, where `N` counts
    /// the rows with a label. Rows labelled `None` are skipped.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: impl Into<Arc<[Option<usize>]>>,
        weights: impl Into<Arc<[f64]>>,
    ) -> Result<Var> {
        let labels: Arc<[Option<usize>]> = labels.into();
        let weights: Arc<[f64]> = weights.into();
        let (n, c) = self.dims2("softmax_cross_entropy", logits)?;
        if labels.len() != n || weights.len() != n {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} labels / {} weights for {n} rows", labels.len(), weights.len()),
            ));
        }
        if let Some(l) = labels.iter().flatten().find(|&&l| l >= c) {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("label {l} outside [0, {c})"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        if c > 0 {
            par::for_each_chunk(&mut probs, c, |_, row| softmax_in_place(row));
        }
        let count = labels.iter().filter(|l| l.is_some()).count();
        let norm = if count > 0 { 1.0 / count as f64 } else { 0.0 };
        let mut total = 0.0;
        for i in 0..n {
            if let Some(l) = labels[i] {
                total += weights[i] * probs[i * c + l].max(PROB_FLOOR).ln();
            }
        }
        let loss = -total * norm;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                weights,
                probs,
                norm,
            },
            &[logits],
        ))
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that depends on a trainable leaf. Trainable leaves unreachable from
    /// `loss` receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if let Op::Reshape(x) = self.nodes[i].op {
                // Hand the buffer straight to the source; views keep no gradient.
                self.accumulate(x, g);
                continue;
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Vec<f64>)> = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.needs(a) {
                    out.push((a, kernels::matmul_a_bt(g, self.value(b).data(), m, n, k)));
                }
                if self.needs(b) {
                    out.push((b, kernels::matmul_at_b(self.value(a).data(), g, m, k, n)));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                out.push((*a, kernels::transpose(g, s[0], s[1])));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
                }
            }
            Op::AddRow(a, bias) => {
                let n = node.value.cols();
                out.push((*a, g.to_vec()));
                if self.needs(*bias) {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|x| x * c).collect())),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                out.push((
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                        .collect(),
                ));
            }
            Op::SoftmaxLast(a) => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; y.len()];
                if d > 0 {
                    par::for_each_chunk(&mut gx, d, |r, row| {
                        let ys = &y[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in row.iter_mut().zip(ys).zip(gs) {
                            *o = yv * (gv - dot);
                        }
                    });
                }
                out.push((*a, gx));
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                out.push((*a, kernels::scatter_add_rows(g, src.cols(), idx, src.rows())));
            }
            Op::SegmentSum(a, offsets) => {
                let d = node.value.cols();
                let rows = self.value(*a).rows();
                let mut gx = vec![0.0; rows * d];
                for s in 0..offsets.len() - 1 {
                    for e in offsets[s]..offsets[s + 1] {
                        gx[e * d..(e + 1) * d].copy_from_slice(&g[s * d..(s + 1) * d]);
                    }
                }
                out.push((*a, gx));
            }
            Op::SegmentMax { x, arg } => {
                let d = node.value.cols();
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &e) in arg.iter().enumerate() {
                    if e != usize::MAX {
                        gx[e * d + o % d] += g[o];
                    }
                }
                out.push((*x, gx));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.data();
                let d = node.value.cols();
                let mut gx = vec![0.0; y.len()];
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    for c in 0..d {
                        let dot: f64 = (lo..hi).map(|r| y[r * d + c] * g[r * d + c]).sum();
                        for r in lo..hi {
                            gx[r * d + c] = y[r * d + c] * (g[r * d + c] - dot);
                        }
                    }
                }
                out.push((*a, gx));
            }
            Op::KernelAggregate {
                x,
                weights,
                m,
                offsets,
            } => {
                let m = *m;
                let xt = self.value(*x);
                let d = xt.cols();
                let mut gx = vec![0.0; xt.len()];
                let mut owner = vec![0usize; xt.rows()];
                for s in 0..offsets.len() - 1 {
                    owner[offsets[s]..offsets[s + 1]].fill(s);
                }
                if d > 0 {
                    par::for_each_chunk(&mut gx, d, |e, row| {
                        let gi = &g[owner[e] * m * d..(owner[e] + 1) * m * d];
                        for k in 0..m {
                            let w = weights[e * m + k];
                            if w == 0.0 {
                                continue;
                            }
                            for (o, v) in row.iter_mut().zip(&gi[k * d..(k + 1) * d]) {
                                *o += w * v;
                            }
                        }
                    });
                }
                out.push((*x, gx));
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + col..r * total + col + w]);
                        }
                        out.push((p, gp));
                    }
                    col += w;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let c = inv_std.len();
                let n = if c == 0 { 0 } else { xhat.len() / c };
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        sum_g[j] += g[r * c + j];
                        sum_gx[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; n * c];
                    for r in 0..n {
                        for j in 0..c {
                            let k = r * c + j;
                            gx[k] = if *training {
                                gam[j] * inv_std[j] / n as f64
                                    * (n as f64 * g[k] - sum_g[j] - xhat[k] * sum_gx[j])
                            } else {
                                gam[j] * inv_std[j] * g[k]
                            };
                        }
                    }
                    out.push((*x, gx));
                }
                out.push((*gamma, sum_gx));
                out.push((*beta, sum_g));
            }
            Op::MaxPoolChannels { x, arg } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &k) in arg.iter().enumerate() {
                    gx[k] += g[o];
                }
                out.push((*x, gx));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                weights,
                probs,
                norm,
            } => {
                let c = self.value(*logits).cols();
                let mut gx = vec![0.0; probs.len()];
                for (i, l) in labels.iter().enumerate() {
                    let Some(l) = *l else { continue };
                    // The clamp is flat below the floor: no gradient there.
                    if probs[i * c + l] <= PROB_FLOOR {
                        continue;
                    }
                    let s = g[0] * weights[i] * norm;
                    for j in 0..c {
                        let delta = if j == l { 1.0 } else { 0.0 };
                        gx[i * c + j] = s * (probs[i * c + j] - delta);
                    }
                }
                out.push((*logits, gx));
            }
        }
        for (v, contrib) in out {
            self.accumulate(v, contrib);
        }
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
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

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
