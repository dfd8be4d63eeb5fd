//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Forward computations append nodes to a [`Tape`]; each node keeps its
//! output value plus whatever the primitive needs for its adjoint (im2col
//! buffers, normalised activations, pooling argmaxes). Since a node can only
//! reference nodes created before it, insertion order is a topological order
//! and [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(len / stride)`, zero padding split with the extra
    /// element on the right.
    Same,
    Valid,
}

/// Which statistics a batch-norm node normalises with.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    Batch,
    Running { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddBias(usize, usize),
    Linear(usize, usize),
    Conv1d { x: usize, w: usize, stride: usize, pad: usize, col: Vec<f64> },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    MaxPool { x: usize, argmax: Vec<usize> },
    Relu(usize),
    Tanh(usize),
    Cos(usize),
    Abs(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Reshape(usize),
    Concat(usize, usize),
    Gather(usize, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | Linear(a, b) | Concat(a, b) => vec![*a, *b],
            Conv1d { x, w, .. } => vec![*x, *w],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            MaxPool { x, .. } | Gather(x, _) => vec![*x],
            Scale(a, _) | AddScalar(a) | Relu(a) | Tanh(a) | Cos(a) | Abs(a) | Square(a) | Sqrt(a) | Sum(a)
            | Mean(a) | SumRows(a) | Reshape(a) => vec![*a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// `c = beta * c + a · b` with `a` m×k and `b` k×n, either optionally stored
/// transposed (row-major in both cases).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_geometry(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= kernel).then(|| ((len - kernel) / stride + 1, 0)),
    }
}

/// Output length of a 1-D convolution, or `None` if the input is too short.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    conv_geometry(len, kernel, stride, padding).map(|g| g.0)
}

/// `[batch, channels, inner]` view of a tensor with rank >= 2.
fn split_channels(shape: &[usize]) -> (usize, usize, usize) {
    let inner: usize = shape[2..].iter().product();
    (shape[0], shape[1], inner)
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

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiated input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Tracked parameter leaf. Repeated calls for the same id on one tape
    /// return the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    /// Adds `bias[c]` along axis 1 of a `[batch, channels, ...]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure!(shape.len() >= 2, "add_bias needs rank >= 2, got {shape:?}");
        let (_, c, inner) = split_channels(&shape);
        ensure!(self.shape(bias) == [c], "bias shape {:?} does not match {c} channels", self.shape(bias));
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += b[(i / inner) % c];
        }
        Ok(self.push(out, Op::AddBias(x.0, bias.0)))
    }

    /// `x · wᵀ` for `x: [batch, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        ensure!(
            xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1],
            "linear: input {xs:?} incompatible with weight {ws:?}"
        );
        let (b, k, n) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; b * n];
        gemm(b, k, n, self.value(x).data(), false, self.value(w).data(), true, &mut out, 0.0);
        let out = Tensor::new(vec![b, n], out)?;
        Ok(self.push(out, Op::Linear(x.0, w.0)))
    }

    /// Cross-correlation of `x: [batch, in_ch, len]` with `w: [filters, in_ch, kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        ensure!(xs.len() == 3 && ws.len() == 3, "conv1d: expected rank-3 input and weight");
        ensure!(stride >= 1, "conv1d: stride must be positive");
        let (b, c, len) = (xs[0], xs[1], xs[2]);
        let (f, wc, k) = (ws[0], ws[1], ws[2]);
        ensure!(c == wc, "conv1d: input has {c} channels, weight expects {wc}");
        let (out_len, pad) = conv_geometry(len, k, stride, padding)
            .ok_or_else(|| Error::contract(format!("conv1d: length {len} shorter than kernel {k}")))?;
        let bl = b * out_len;
        let xd = self.value(x).data();
        let mut col = vec![0.0; c * k * bl];
        for ci in 0..c {
            for ki in 0..k {
                let row = &mut col[(ci * k + ki) * bl..(ci * k + ki + 1) * bl];
                for bi in 0..b {
                    let src = &xd[(bi * c + ci) * len..(bi * c + ci + 1) * len];
                    for t in 0..out_len {
                        let pos = (t * stride + ki) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            row[bi * out_len + t] = src[pos as usize];
                        }
                    }
                }
            }
        }
        let mut mat = vec![0.0; f * bl];
        gemm(f, c * k, bl, self.value(w).data(), false, &col, false, &mut mat, 0.0);
        let mut out = vec![0.0; b * f * out_len];
        for fi in 0..f {
            for bi in 0..b {
                out[(bi * f + fi) * out_len..(bi * f + fi + 1) * out_len]
                    .copy_from_slice(&mat[fi * bl + bi * out_len..fi * bl + (bi + 1) * out_len]);
            }
        }
        let out = Tensor::new(vec![b, f, out_len], out)?;
        Ok(self.push(out, Op::Conv1d { x: x.0, w: w.0, stride, pad, col }))
    }

    /// Per-channel normalisation of `[batch, channels, ...]`, followed by
    /// `gamma * x̂ + beta`. With [`NormStats::Batch`] the batch mean and
    /// biased variance are returned so the caller can update running stats.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let shape = self.shape(x).to_vec();
        ensure!(shape.len() >= 2, "batch_norm needs rank >= 2, got {shape:?}");
        let (b, c, inner) = split_channels(&shape);
        ensure!(self.shape(gamma) == [c] && self.shape(beta) == [c], "batch_norm: affine params must have {c} entries");
        let xd = self.value(x).data();
        let n = (b * inner) as f64;
        let (mean, var, batch) = match stats {
            NormStats::Batch => {
                ensure!(b >= 2, "batch_norm in training mode needs batch >= 2, got {b}");
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let s = &xd[(bi * c + ci) * inner..(bi * c + ci + 1) * inner];
                        mean[ci] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for bi in 0..b {
                    for ci in 0..c {
                        let s = &xd[(bi * c + ci) * inner..(bi * c + ci + 1) * inner];
                        var[ci] += s.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                ensure!(mean.len() == c && var.len() == c, "batch_norm: running stats must have {c} entries");
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..xd.len() {
            let ci = (i / inner) % c;
            xhat[i] = (xd[i] - mean[ci]) * inv_std[ci];
            out[i] = g[ci] * xhat[i] + bt[ci];
        }
        let out = Tensor::new(shape, out)?;
        let node = self.push(out, Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, batch });
        Ok((node, batch.then_some((mean, var))))
    }

    /// Non-overlapping max pooling along the last axis of `[batch, ch, len]`.
    /// A trailing partial window is kept; ties go to the first index.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure!(shape.len() == 3, "max_pool1d expects [batch, ch, len], got {shape:?}");
        ensure!(size >= 1, "pool size must be positive");
        let (rows, len) = (shape[0] * shape[1], shape[2]);
        let out_len = len.div_ceil(size);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for o in 0..out_len {
                let start = r * len + o * size;
                let end = (start + size).min((r + 1) * len);
                let mut best = start;
                for i in start + 1..end {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], out_len], out)?;
        Ok(self.push(out, Op::MaxPool { x: x.0, argmax }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.0))
    }

    /// `|x|`, with subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// `sqrt(x)` for `x >= 0`; the gradient at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0).sqrt(), Op::Sqrt(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a.0))
    }

    /// Sums every axis but the first: `[batch, ...] -> [batch]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let rows = t.dim(0);
        let v = Tensor::from_vec((0..rows).map(|r| t.row(r).iter().sum()).collect());
        self.push(v, Op::SumRows(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a.0)))
    }

    /// `[batch, ...] -> [batch, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let rows = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[rows, rest])
    }

    /// Stacks two tensors along axis 0.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        ensure!(sa[1..] == sb[1..], "concat: trailing shapes differ {sa:?} vs {sb:?}");
        let mut shape = sa.clone();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Concat(a.0, b.0)))
    }

    /// Selects rows (axis 0) by index; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.dim(0);
        ensure!(!idx.is_empty(), "gather_rows: empty index list");
        ensure!(idx.iter().all(|&i| i < rows), "gather_rows: index out of range for {rows} rows");
        let mut data = Vec::with_capacity(idx.len() * t.len() / rows);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Gather(a.0, idx.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient for every
    /// parameter in `store` (zero for parameters not on this tape) and clears
    /// the tape for reuse.
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        ensure!(
            self.value(loss).len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::default();

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.op.inputs().iter().any(|&j| j >= i) {
                return Err(Error::Internal(format!("tape node {i} references a later node")));
            }
            self.backprop_node(node, g, &mut grads, &mut out)?;
        }

        for (id, p) in store.iter() {
            out.map.entry(id).or_insert_with(|| Tensor::zeros(p.value.shape()));
        }
        self.clear();
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        let mut acc = |j: usize, t: Tensor| match &mut grads[j] {
            Some(e) => e.axpy(1.0, &t),
            slot @ None => *slot = Some(t),
        };
        let elementwise = |src: &Tensor, g: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = src.data().iter().zip(g.data()).map(|(&x, &gi)| f(x, gi)).collect();
            Tensor::new(src.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match out.map.get_mut(id) {
                Some(e) => e.axpy(1.0, &g),
                None => {
                    out.map.insert(*id, g);
                }
            },
            Op::Add(a, b) => {
                acc(*b, g.clone());
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|x| -x));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                acc(*a, elementwise(val(*b), &g, &|y, gi| y * gi));
                acc(*b, elementwise(val(*a), &g, &|x, gi| x * gi));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, g.reshape(&shape)?);
            }
            Op::AddBias(x, b) => {
                let c = val(*b).len();
                let (_, _, inner) = split_channels(g.shape());
                let mut gb = vec![0.0; c];
                for (i, gi) in g.data().iter().enumerate() {
                    gb[(i / inner) % c] += gi;
                }
                acc(*b, Tensor::from_vec(gb));
                acc(*x, g);
            }
            Op::Linear(x, w) => {
                let (xt, wt) = (val(*x), val(*w));
                let (b, k, n) = (xt.dim(0), xt.dim(1), wt.dim(0));
                let mut gx = vec![0.0; b * k];
                gemm(b, n, k, g.data(), false, wt.data(), false, &mut gx, 0.0);
                let mut gw = vec![0.0; n * k];
                gemm(n, b, k, g.data(), true, xt.data(), false, &mut gw, 0.0);
                acc(*x, Tensor::new(vec![b, k], gx)?);
                acc(*w, Tensor::new(vec![n, k], gw)?);
            }
            Op::Conv1d { x, w, stride, pad, col } => {
                let (xt, wt) = (val(*x), val(*w));
                let (b, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
                let (f, k) = (wt.dim(0), wt.dim(2));
                let out_len = g.dim(2);
                let bl = b * out_len;
                let gd = g.data();
                let mut gmat = vec![0.0; f * bl];
                for fi in 0..f {
                    for bi in 0..b {
                        gmat[fi * bl + bi * out_len..fi * bl + (bi + 1) * out_len]
                            .copy_from_slice(&gd[(bi * f + fi) * out_len..(bi * f + fi + 1) * out_len]);
                    }
                }
                let mut gw = vec![0.0; f * c * k];
                gemm(f, bl, c * k, &gmat, false, col, true, &mut gw, 0.0);
                let mut gcol = vec![0.0; c * k * bl];
                gemm(c * k, f, bl, wt.data(), true, &gmat, false, &mut gcol, 0.0);
                let mut gx = vec![0.0; b * c * len];
                for ci in 0..c {
                    for ki in 0..k {
                        let row = &gcol[(ci * k + ki) * bl..(ci * k + ki + 1) * bl];
                        for bi in 0..b {
                            let dst = &mut gx[(bi * c + ci) * len..(bi * c + ci + 1) * len];
                            for t in 0..out_len {
                                let pos = (t * stride + ki) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    dst[pos as usize] += row[bi * out_len + t];
                                }
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(vec![b, c, len], gx)?);
                acc(*w, Tensor::new(vec![f, c, k], gw)?);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let (b, c, inner) = split_channels(g.shape());
                let gam = val(*gamma).data();
                let gd = g.data();
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for i in 0..gd.len() {
                    let ci = (i / inner) % c;
                    ggamma[ci] += gd[i] * xhat[i];
                    gbeta[ci] += gd[i];
                }
                let mut gx = vec![0.0; gd.len()];
                if *batch {
                    let n = (b * inner) as f64;
                    // dL/dx = inv_std / n * (n * dx̂ - Σdx̂ - x̂ Σ(dx̂ x̂)), with dx̂ = g * gamma
                    for i in 0..gd.len() {
                        let ci = (i / inner) % c;
                        let dxhat = gd[i] * gam[ci];
                        gx[i] = inv_std[ci] / n * (n * dxhat - gam[ci] * gbeta[ci] - xhat[i] * gam[ci] * ggamma[ci]);
                    }
                } else {
                    for i in 0..gd.len() {
                        let ci = (i / inner) % c;
                        gx[i] = gd[i] * gam[ci] * inv_std[ci];
                    }
                }
                acc(*x, Tensor::new(g.shape().to_vec(), gx)?);
                acc(*gamma, Tensor::from_vec(ggamma));
                acc(*beta, Tensor::from_vec(gbeta));
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = Tensor::zeros(val(*x).shape());
                let gxd = gx.data_mut();
                for (gi, &src) in g.data().iter().zip(argmax) {
                    gxd[src] += gi;
                }
                acc(*x, gx);
            }
            Op::Relu(a) => acc(*a, elementwise(val(*a), &g, &|x, gi| if x > 0.0 { gi } else { 0.0 })),
            Op::Tanh(a) => acc(*a, elementwise(&node.value, &g, &|y, gi| gi * (1.0 - y * y))),
            Op::Cos(a) => acc(*a, elementwise(val(*a), &g, &|x, gi| -gi * x.sin())),
            Op::Abs(a) => acc(
                *a,
                elementwise(val(*a), &g, &|x, gi| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Square(a) => acc(*a, elementwise(val(*a), &g, &|x, gi| 2.0 * x * gi)),
            Op::Sqrt(a) => acc(*a, elementwise(&node.value, &g, &|y, gi| if y > 0.0 { 0.5 * gi / y } else { 0.0 })),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let t = val(*a);
                acc(*a, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let w = t.len() / t.dim(0);
                let data = g.data().iter().flat_map(|&gi| std::iter::repeat_n(gi, w)).collect();
                acc(*a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::Concat(a, b) => {
                let na = val(*a).len();
                let ga = Tensor::new(val(*a).shape().to_vec(), g.data()[..na].to_vec())?;
                let gb = Tensor::new(val(*b).shape().to_vec(), g.data()[na..].to_vec())?;
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Gather(a, idx) => {
                let src = val(*a);
                let w = src.len() / src.dim(0);
                let mut ga = Tensor::zeros(src.shape());
                let gad = ga.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..w {
                        gad[i * w + j] += g.data()[r * w + j];
                    }
                }
                acc(*a, ga);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, t)| s.add(*n, t.clone(), true)).collect();
        (s, ids)
    }

    #[test]
    fn sum_gives_ones() {
        let (store, ids) = store_with(&[("p", Tensor::from_vec(vec![0.5, -1.0, 3.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let loss = tape.sum(p);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn sum_of_squares_gives_twice_p() {
        let (store, ids) = store_with(&[("p", Tensor::from_vec(vec![2.0, -1.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[4.0, -2.0]);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let (store, ids) =
            store_with(&[("a", Tensor::from_vec(vec![1.0])), ("b", Tensor::from_vec(vec![1.0, 2.0]))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, ids[0]);
        let loss = tape.sum(a);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(ids[1]).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, ids) = store_with(&[("p", Tensor::from_vec(vec![1.0, 2.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        assert!(matches!(tape.backward(p, &store), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_param_reuses_node() {
        let (store, ids) = store_with(&[("p", Tensor::from_vec(vec![3.0]))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, ids[0]);
        let b = tape.param(&store, ids[0]);
        assert_eq!(a, b);
    }

    #[test]
    fn same_padding_lengths() {
        assert_eq!(conv_out_len(256, 3, 2, Padding::Same), Some(128));
        assert_eq!(conv_out_len(15, 3, 1, Padding::Same), Some(15));
        assert_eq!(conv_out_len(2, 3, 1, Padding::Valid), None);
    }
}
