//! Tape-based reverse-mode differentiation over the predictor's op set.
//!
//! The engine records a forward computation as a sequence of operations on
//! a [`Tape`], then propagates a scalar seed backwards to obtain exact
//! gradients with respect to every parameter and input leaf. The op set is
//! deliberately fixed to what the predictor needs; this is not a general
//! autodiff library.
//!
//! All values are 64-bit floats. Every op validates operand shapes at
//! record time and rejects non-finite outputs.

// Kernels address several row-major buffers with one row/column index;
// iterator rewrites would hide the shared stride arithmetic.
#![allow(clippy::needless_range_loop)]

mod check;
mod tensor;

pub use check::finite_difference_check;
pub use tensor::Tensor;

use thiserror::Error;

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{context} (shape {shape:?})")]
    BadShape {
        context: &'static str,
        shape: Vec<usize>,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("mse mask has no valid frames")]
    EmptyMask,
    #[error("gradient seed (node {0}) is not on this tape")]
    SeedNotOnTape(usize),
    #[error("gradient seed must be scalar, got shape {0:?}")]
    SeedNotScalar(Vec<usize>),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Learnable parameter; gradients are reported.
    Param,
    /// Differentiated input feature; gradients are reported.
    Input,
    /// Non-learnable data (ground truth, masks).
    Constant,
}

#[derive(Debug)]
enum Op {
    Leaf(LeafKind),
    Affine {
        x: usize,
        w: usize,
        b: usize,
    },
    Matmul {
        a: usize,
        b: usize,
    },
    Relu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        /// Per-row 1/sqrt(var + eps), saved for the backward pass.
        inv_std: Vec<f64>,
    },
    MaxPoolRows {
        x: usize,
        /// Per-column argmax row; first row wins on exact ties.
        argmax: Vec<usize>,
    },
    BroadcastRows {
        v: usize,
        n: usize,
    },
    ConcatCols {
        a: usize,
        b: usize,
        a_cols: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    StackRows {
        parts: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        /// Saved softmax weights, shape `[q_rows, keys]`.
        weights: Tensor,
        scale: f64,
    },
    Mse {
        pred: usize,
        truth: usize,
        mask: usize,
        valid: f64,
    },
    Scale {
        x: usize,
        c: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation; single-writer while recording, immutable
/// and shareable once complete.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Kind recorded at binding time, `None` for derived values. Backward
    /// and replay treat all leaves alike; the tag documents intent.
    pub fn leaf_kind(&self, id: ValueId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<ValueId, GradError> {
        if !value.all_finite() {
            return Err(GradError::NonFinite { op: name });
        }
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    fn leaf(&mut self, value: Tensor, kind: LeafKind) -> Result<ValueId, GradError> {
        self.push(value, Op::Leaf(kind), "leaf")
    }

    pub fn param(&mut self, value: Tensor) -> Result<ValueId, GradError> {
        self.leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor) -> Result<ValueId, GradError> {
        self.leaf(value, LeafKind::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<ValueId, GradError> {
        self.leaf(value, LeafKind::Constant)
    }

    /// `x W + b` with `x: [n, i]`, `w: [i, o]`, `b: [o]`.
    pub fn affine(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId, GradError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || wv.shape().len() != 2 {
            return Err(GradError::ShapeMismatch {
                op: "affine",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if bv.shape() != [wv.cols()] {
            return Err(GradError::ShapeMismatch {
                op: "affine",
                lhs: wv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = affine_forward(xv, wv, bv);
        self.push(
            out,
            Op::Affine {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            "affine",
        )
    }

    /// Plain matrix product `a b` with `a: [n, k]`, `b: [k, m]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() || bv.shape().len() != 2 {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(vec![av.rows(), bv.cols()]);
        matmul_nn(
            out.data_mut(),
            av.data(),
            bv.data(),
            av.rows(),
            av.cols(),
            bv.cols(),
        );
        self.push(out, Op::Matmul { a: a.0, b: b.0 }, "matmul")
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, GradError> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x: x.0 }, "relu")
    }

    /// Row-wise normalization to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: ValueId) -> Result<ValueId, GradError> {
        let xv = self.value(x);
        let (out, inv_std) = layer_norm_forward(xv);
        self.push(out, Op::LayerNorm { x: x.0, inv_std }, "layer_norm")
    }

    /// Column-wise maxima over the rows of `x: [n, d]`, yielding `[d]`.
    ///
    /// Gradient routes to the first argmax row on exact ties.
    pub fn max_pool_rows(&mut self, x: ValueId) -> Result<ValueId, GradError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(GradError::BadShape {
                context: "max_pool_rows expects a matrix",
                shape: xv.shape().to_vec(),
            });
        }
        let (out, argmax) = max_pool_forward(xv);
        self.push(out, Op::MaxPoolRows { x: x.0, argmax }, "max_pool_rows")
    }

    /// Repeats vector `v: [d]` as `n` identical rows, yielding `[n, d]`.
    pub fn broadcast_rows(&mut self, v: ValueId, n: usize) -> Result<ValueId, GradError> {
        let vv = self.value(v);
        if vv.shape().len() != 1 || n == 0 {
            return Err(GradError::BadShape {
                context: "broadcast_rows expects a vector and n >= 1",
                shape: vv.shape().to_vec(),
            });
        }
        let d = vv.cols();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(vv.data());
        }
        let out = Tensor::new(vec![n, d], data).expect("broadcast shape");
        self.push(out, Op::BroadcastRows { v: v.0, n }, "broadcast_rows")
    }

    /// Concatenates along the last axis: two vectors, or two matrices with
    /// equal row count.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let mismatch = || GradError::ShapeMismatch {
            op: "concat",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        if av.shape().len() != bv.shape().len() {
            return Err(mismatch());
        }
        let a_cols = av.cols();
        let out = if av.shape().len() == 1 {
            let mut data = av.data().to_vec();
            data.extend_from_slice(bv.data());
            Tensor::vector(data)
        } else {
            if av.rows() != bv.rows() {
                return Err(mismatch());
            }
            let (n, bc) = (av.rows(), bv.cols());
            let mut data = Vec::with_capacity(n * (a_cols + bc));
            for r in 0..n {
                data.extend_from_slice(av.row(r));
                data.extend_from_slice(bv.row(r));
            }
            Tensor::new(vec![n, a_cols + bc], data).expect("concat shape")
        };
        self.push(
            out,
            Op::ConcatCols {
                a: a.0,
                b: b.0,
                a_cols,
            },
            "concat",
        )
    }

    /// Rows `start..start + len` of matrix `x`.
    pub fn slice_rows(
        &mut self,
        x: ValueId,
        start: usize,
        len: usize,
    ) -> Result<ValueId, GradError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || len == 0 || start + len > xv.rows() {
            return Err(GradError::BadShape {
                context: "slice_rows out of range",
                shape: xv.shape().to_vec(),
            });
        }
        let c = xv.cols();
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data).expect("slice shape");
        self.push(out, Op::SliceRows { x: x.0, start }, "slice_rows")
    }

    /// Stacks equal-length vectors into a matrix, one row each.
    pub fn stack_rows(&mut self, parts: &[ValueId]) -> Result<ValueId, GradError> {
        if parts.is_empty() {
            return Err(GradError::BadShape {
                context: "stack_rows needs at least one row",
                shape: vec![],
            });
        }
        let d = self.value(parts[0]).cols();
        let mut data = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            let pv = self.value(p);
            if pv.shape() != [d] {
                return Err(GradError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: pv.shape().to_vec(),
                });
            }
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![parts.len(), d], data).expect("stack shape");
        let parts = parts.iter().map(|p| p.0).collect();
        self.push(out, Op::StackRows { parts }, "stack_rows")
    }

    /// Reinterprets `x` under a new shape with the same element count.
    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId, GradError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.numel() {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, xv.data().to_vec()).expect("reshape");
        self.push(out, Op::Reshape { x: x.0 }, "reshape")
    }

    /// Softmax over a vector.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId, GradError> {
        let xv = self.value(x);
        if xv.shape().len() != 1 {
            return Err(GradError::BadShape {
                context: "softmax expects a vector",
                shape: xv.shape().to_vec(),
            });
        }
        let out = Tensor::vector(softmax_slice(xv.data()));
        self.push(out, Op::Softmax { x: x.0 }, "softmax")
    }

    /// Single-head scaled dot-product attention.
    ///
    /// `q: [qr, dk]`, `k: [p, dk]`, `v: [p, dv]` → `[qr, dv]` with weights
    /// `softmax(q kᵀ / √dk)` computed row-wise.
    pub fn scaled_dot_attention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
    ) -> Result<ValueId, GradError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape().len() != 2 || kv.shape().len() != 2 || vv.shape().len() != 2 {
            return Err(GradError::BadShape {
                context: "attention expects matrices",
                shape: qv.shape().to_vec(),
            });
        }
        if qv.cols() != kv.cols() || kv.rows() != vv.rows() {
            return Err(GradError::ShapeMismatch {
                op: "scaled_dot_attention",
                lhs: kv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let scale = 1.0 / (qv.cols() as f64).sqrt();
        let (qr, p, dv) = (qv.rows(), kv.rows(), vv.cols());
        // scores = q kᵀ · scale, then row-wise softmax
        let mut scores = Tensor::zeros(vec![qr, p]);
        matmul_nt(scores.data_mut(), qv.data(), kv.data(), qr, qv.cols(), p);
        for s in scores.data_mut() {
            *s *= scale;
        }
        let mut weights = Tensor::zeros(vec![qr, p]);
        for r in 0..qr {
            let w = softmax_slice(scores.row(r));
            weights.data_mut()[r * p..(r + 1) * p].copy_from_slice(&w);
        }
        let mut out = Tensor::zeros(vec![qr, dv]);
        matmul_nn(out.data_mut(), weights.data(), vv.data(), qr, p, dv);
        self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                weights,
                scale,
            },
            "scaled_dot_attention",
        )
    }

    /// Attention weights saved by a [`Tape::scaled_dot_attention`] node.
    pub fn saved_attention_weights(&self, id: ValueId) -> Option<&Tensor> {
        match &self.nodes[id.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Mean squared displacement over mask-valid frames.
    ///
    /// `pred` and `truth` are `[T, 2]`; `mask` is `[T]` of 0/1. Each valid
    /// frame contributes its full squared Euclidean displacement; the mean
    /// is over valid frames only.
    pub fn mse(
        &mut self,
        pred: ValueId,
        truth: ValueId,
        mask: ValueId,
    ) -> Result<ValueId, GradError> {
        let (pv, tv, mv) = (self.value(pred), self.value(truth), self.value(mask));
        if pv.shape() != tv.shape() || pv.shape().len() != 2 || pv.cols() != 2 {
            return Err(GradError::ShapeMismatch {
                op: "mse",
                lhs: pv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        if mv.shape() != [pv.rows()] {
            return Err(GradError::ShapeMismatch {
                op: "mse",
                lhs: pv.shape().to_vec(),
                rhs: mv.shape().to_vec(),
            });
        }
        let valid: f64 = mv.data().iter().sum();
        if valid <= 0.0 {
            return Err(GradError::EmptyMask);
        }
        let mut acc = 0.0;
        for t in 0..pv.rows() {
            let m = mv.data()[t];
            let dx = pv.at2(t, 0) - tv.at2(t, 0);
            let dy = pv.at2(t, 1) - tv.at2(t, 1);
            acc += m * (dx * dx + dy * dy);
        }
        let out = Tensor::scalar(acc / valid);
        self.push(
            out,
            Op::Mse {
                pred: pred.0,
                truth: truth.0,
                mask: mask.0,
                valid,
            },
            "mse",
        )
    }

    /// Multiplies by a compile-time-known scalar constant.
    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId, GradError> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x: x.0, c }, "scale")
    }

    /// Reverse pass from a scalar seed node.
    ///
    /// Returns the gradient of the seed with respect to every node on the
    /// tape; look up params and inputs through [`Gradients::wrt`].
    pub fn gradients(&self, seed: ValueId) -> Result<Gradients, GradError> {
        if seed.0 >= self.nodes.len() {
            return Err(GradError::SeedNotOnTape(seed.0));
        }
        let seed_val = &self.nodes[seed.0].value;
        if !seed_val.is_scalar() {
            return Err(GradError::SeedNotScalar(seed_val.shape().to_vec()));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[seed.0].data_mut()[0] = 1.0;

        for idx in (0..=seed.0).rev() {
            // Inputs of a node always have smaller indices, but their
            // relative order is arbitrary; cloning the output gradient
            // sidesteps aliasing between the node and its operands.
            let go = grads[idx].clone();
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(_) => {}
                Op::Affine { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let (n, i, o) = (xv.rows(), xv.cols(), wv.cols());
                    matmul_nt(grads[*x].data_mut(), go.data(), wv.data(), n, o, i);
                    matmul_tn(grads[*w].data_mut(), xv.data(), go.data(), n, i, o);
                    let gb = grads[*b].data_mut();
                    for r in 0..n {
                        for c in 0..o {
                            gb[c] += go.data()[r * o + c];
                        }
                    }
                }
                Op::Matmul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    matmul_nt(grads[*a].data_mut(), go.data(), bv.data(), n, m, k);
                    matmul_tn(grads[*b].data_mut(), av.data(), go.data(), n, k, m);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    let gx = grads[*x].data_mut();
                    for (i, &v) in xv.data().iter().enumerate() {
                        if v > 0.0 {
                            gx[i] += go.data()[i];
                        }
                    }
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let d = y.cols();
                    let gx = grads[*x].data_mut();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &go.data()[r * d..(r + 1) * d];
                        let mean_g: f64 = gr.iter().sum::<f64>() / d as f64;
                        let mean_gy: f64 =
                            gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / d as f64;
                        let s = inv_std[r];
                        for c in 0..d {
                            gx[r * d + c] += s * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                }
                Op::MaxPoolRows { x, argmax } => {
                    let d = node.value.cols();
                    let gx = grads[*x].data_mut();
                    for c in 0..d {
                        gx[argmax[c] * d + c] += go.data()[c];
                    }
                }
                Op::BroadcastRows { v, n } => {
                    let d = node.value.cols();
                    let gv = grads[*v].data_mut();
                    for r in 0..*n {
                        for c in 0..d {
                            gv[c] += go.data()[r * d + c];
                        }
                    }
                }
                Op::ConcatCols { a, b, a_cols } => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let b_cols = total - a_cols;
                    for r in 0..rows {
                        let ga = grads[*a].data_mut();
                        for c in 0..*a_cols {
                            ga[r * a_cols + c] += go.data()[r * total + c];
                        }
                        let gb = grads[*b].data_mut();
                        for c in 0..b_cols {
                            gb[r * b_cols + c] += go.data()[r * total + a_cols + c];
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = node.value.cols();
                    let gx = grads[*x].data_mut();
                    for r in 0..node.value.rows() {
                        for cc in 0..c {
                            gx[(start + r) * c + cc] += go.data()[r * c + cc];
                        }
                    }
                }
                Op::StackRows { parts } => {
                    let d = node.value.cols();
                    for (r, &p) in parts.iter().enumerate() {
                        let gp = grads[p].data_mut();
                        for c in 0..d {
                            gp[c] += go.data()[r * d + c];
                        }
                    }
                }
                Op::Reshape { x } => {
                    let gx = grads[*x].data_mut();
                    for (g, v) in gx.iter_mut().zip(go.data()) {
                        *g += v;
                    }
                }
                Op::Softmax { x } => {
                    let y = node.value.data();
                    let dot: f64 = go.data().iter().zip(y).map(|(g, v)| g * v).sum();
                    let gx = grads[*x].data_mut();
                    for i in 0..y.len() {
                        gx[i] += y[i] * (go.data()[i] - dot);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    weights,
                    scale,
                } => {
                    let qv = &self.nodes[*q].value;
                    let kv = &self.nodes[*k].value;
                    let vv = &self.nodes[*v].value;
                    let (qr, p) = (weights.rows(), weights.cols());
                    let (dk, dv) = (qv.cols(), vv.cols());
                    // dW = dO Vᵀ, then back through the row-wise softmax.
                    let mut dw = vec![0.0; qr * p];
                    matmul_nt(&mut dw, go.data(), vv.data(), qr, dv, p);
                    let mut ds = vec![0.0; qr * p];
                    for r in 0..qr {
                        let wr = weights.row(r);
                        let dwr = &dw[r * p..(r + 1) * p];
                        let dot: f64 = dwr.iter().zip(wr).map(|(a, b)| a * b).sum();
                        for c in 0..p {
                            ds[r * p + c] = wr[c] * (dwr[c] - dot) * scale;
                        }
                    }
                    matmul_nn(grads[*q].data_mut(), &ds, kv.data(), qr, p, dk);
                    matmul_tn(grads[*k].data_mut(), &ds, qv.data(), qr, p, dk);
                    matmul_tn(grads[*v].data_mut(), weights.data(), go.data(), qr, p, dv);
                }
                Op::Mse {
                    pred,
                    truth,
                    mask,
                    valid,
                } => {
                    let pv = &self.nodes[*pred].value;
                    let tv = &self.nodes[*truth].value;
                    let mv = &self.nodes[*mask].value;
                    let g = go.data()[0];
                    let coef = 2.0 * g / valid;
                    let rows = pv.rows();
                    let mut gp = vec![0.0; rows * 2];
                    for t in 0..rows {
                        let m = mv.data()[t];
                        gp[t * 2] = coef * m * (pv.at2(t, 0) - tv.at2(t, 0));
                        gp[t * 2 + 1] = coef * m * (pv.at2(t, 1) - tv.at2(t, 1));
                    }
                    for (dst, v) in grads[*pred].data_mut().iter_mut().zip(&gp) {
                        *dst += v;
                    }
                    for (dst, v) in grads[*truth].data_mut().iter_mut().zip(&gp) {
                        *dst -= v;
                    }
                }
                Op::Scale { x, c } => {
                    let gx = grads[*x].data_mut();
                    for (g, v) in gx.iter_mut().zip(go.data()) {
                        *g += c * v;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    ///
    /// Returns the recomputed value of `id`; bit-identical to the stored
    /// value by construction (same op implementations, same order).
    pub fn replay(&self, id: ValueId) -> Result<Tensor, GradError> {
        if id.0 >= self.nodes.len() {
            return Err(GradError::SeedNotOnTape(id.0));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(id.0 + 1);
        for node in self.nodes.iter().take(id.0 + 1) {
            let v = match &node.op {
                Op::Leaf(_) => node.value.clone(),
                Op::Affine { x, w, b } => affine_forward(&values[*x], &values[*w], &values[*b]),
                Op::Matmul { a, b } => {
                    let (av, bv) = (&values[*a], &values[*b]);
                    let mut out = Tensor::zeros(vec![av.rows(), bv.cols()]);
                    matmul_nn(
                        out.data_mut(),
                        av.data(),
                        bv.data(),
                        av.rows(),
                        av.cols(),
                        bv.cols(),
                    );
                    out
                }
                Op::Relu { x } => values[*x].map(|v| v.max(0.0)),
                Op::LayerNorm { x, .. } => layer_norm_forward(&values[*x]).0,
                Op::MaxPoolRows { x, .. } => max_pool_forward(&values[*x]).0,
                Op::BroadcastRows { v, n } => {
                    let vv = &values[*v];
                    let mut data = Vec::with_capacity(n * vv.cols());
                    for _ in 0..*n {
                        data.extend_from_slice(vv.data());
                    }
                    Tensor::new(vec![*n, vv.cols()], data).expect("replay broadcast")
                }
                Op::ConcatCols { a, b, a_cols: _ } => {
                    let (av, bv) = (&values[*a], &values[*b]);
                    if av.shape().len() == 1 {
                        let mut data = av.data().to_vec();
                        data.extend_from_slice(bv.data());
                        Tensor::vector(data)
                    } else {
                        let mut data = Vec::with_capacity(av.numel() + bv.numel());
                        for r in 0..av.rows() {
                            data.extend_from_slice(av.row(r));
                            data.extend_from_slice(bv.row(r));
                        }
                        Tensor::new(vec![av.rows(), av.cols() + bv.cols()], data)
                            .expect("replay concat")
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = &values[*x];
                    let c = xv.cols();
                    let len = node.value.rows();
                    Tensor::new(
                        vec![len, c],
                        xv.data()[start * c..(start + len) * c].to_vec(),
                    )
                    .expect("replay slice")
                }
                Op::StackRows { parts } => {
                    let d = values[parts[0]].cols();
                    let mut data = Vec::with_capacity(parts.len() * d);
                    for &p in parts {
                        data.extend_from_slice(values[p].data());
                    }
                    Tensor::new(vec![parts.len(), d], data).expect("replay stack")
                }
                Op::Reshape { x } => {
                    Tensor::new(node.value.shape().to_vec(), values[*x].data().to_vec())
                        .expect("replay reshape")
                }
                Op::Softmax { x } => Tensor::vector(softmax_slice(values[*x].data())),
                Op::Attention { q, k, v, scale, .. } => {
                    let (qv, kv, vv) = (&values[*q], &values[*k], &values[*v]);
                    let (qr, p, dv) = (qv.rows(), kv.rows(), vv.cols());
                    let mut scores = vec![0.0; qr * p];
                    matmul_nt(&mut scores, qv.data(), kv.data(), qr, qv.cols(), p);
                    let mut weights = vec![0.0; qr * p];
                    for r in 0..qr {
                        let row: Vec<f64> = scores[r * p..(r + 1) * p]
                            .iter()
                            .map(|s| s * scale)
                            .collect();
                        weights[r * p..(r + 1) * p].copy_from_slice(&softmax_slice(&row));
                    }
                    let mut out = Tensor::zeros(vec![qr, dv]);
                    matmul_nn(out.data_mut(), &weights, vv.data(), qr, p, dv);
                    out
                }
                Op::Mse {
                    pred,
                    truth,
                    mask,
                    valid,
                } => {
                    let (pv, tv, mv) = (&values[*pred], &values[*truth], &values[*mask]);
                    let mut acc = 0.0;
                    for t in 0..pv.rows() {
                        let m = mv.data()[t];
                        let dx = pv.at2(t, 0) - tv.at2(t, 0);
                        let dy = pv.at2(t, 1) - tv.at2(t, 1);
                        acc += m * (dx * dx + dy * dy);
                    }
                    Tensor::scalar(acc / valid)
                }
                Op::Scale { x, c } => values[*x].map(|v| v * c),
            };
            values.push(v);
        }
        Ok(values.pop().expect("replay produced a value"))
    }
}

/// Result of a reverse pass; gradients indexed by the tape's value ids.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, id: ValueId) -> &Tensor {
        &self.grads[id.0]
    }
}

fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, i, o) = (x.rows(), x.cols(), w.cols());
    let mut out = Tensor::zeros(vec![n, o]);
    matmul_nn(out.data_mut(), x.data(), w.data(), n, i, o);
    let data = out.data_mut();
    for r in 0..n {
        for c in 0..o {
            data[r * o + c] += b.data()[c];
        }
    }
    out
}

fn layer_norm_forward(x: &Tensor) -> (Tensor, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(s);
        for c in 0..d {
            out.data_mut()[r * d + c] = (row[c] - mean) * s;
        }
    }
    (out, inv_std)
}

fn max_pool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(vec![d]);
    let mut argmax = vec![0usize; d];
    for c in 0..d {
        let mut best = x.at2(0, c);
        let mut best_r = 0;
        for r in 1..n {
            let v = x.at2(r, c);
            if v > best {
                best = v;
                best_r = r;
            }
        }
        out.data_mut()[c] = best;
        argmax[c] = best_r;
    }
    (out, argmax)
}

fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `out[n×m] += a[n×k] b[k×m]`
fn matmul_nn(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×k] += a[n×m] bᵀ` where `b` is `[k×m]`
fn matmul_nt(out: &mut [f64], a: &[f64], b: &[f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out[k×m] += aᵀ c` where `a` is `[n×k]`, `c` is `[n×m]`
fn matmul_tn(out: &mut [f64], a: &[f64], c: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &c[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o += av * cv;
            }
        }
    }
}
