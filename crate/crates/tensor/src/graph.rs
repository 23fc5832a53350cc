//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] is a define-by-run tape: every op appends a node whose inputs
//! are earlier nodes, so node ids are already a topological order and the
//! backward pass is a single reverse sweep. Graphs are cheap and rebuilt per
//! training step; values live on the tape, parameters live outside (see
//! [`crate::param::Parameter`]) and are registered as leaves each step.
//!
//! Differentiation conventions are pinned for reproducibility:
//! - `relu`/`fkappa` pass zero gradient exactly at their kink;
//! - max-pool routes gradient to the first (row-major) maximum on ties;
//! - dropout samples its mask at node-creation time from the caller's RNG
//!   stream, so a rebuilt graph with an equally-seeded stream is bit-identical.
//!
//! Gradient flow honors `needs_grad`: a leaf registered with
//! `needs_grad = false` (frozen weights, input data, constants) never gets a
//! gradient buffer, and branches whose leaves are all frozen are skipped
//! entirely during backward.

use crate::conv::{col2im, im2col, ConvGeom, Padding};
use crate::error::{Result, TensorError};
use crate::gemm::{gemm_nn, gemm_tn, transpose};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a node on the tape. Valid only for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    /// Elementwise sum of two same-shape nodes.
    Add(NodeId, NodeId),
    /// Multiplication by a compile-time constant.
    Scale(NodeId, T),
    /// `y = x·w + b` with `x:[B,n]`, `w:[n,m]`, `b:[m]`.
    Dense { x: NodeId, w: NodeId, b: NodeId },
    /// `x:[B,H,W,Cin]`, `w:[kh,kw,Cin,Cout]` (row-major == `[kh·kw·Cin, Cout]`), `b:[Cout]`.
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    /// `x:[B,h,w,Cin]`, `w:[Cin,kh,kw,Cout]` (row-major == `[Cin, kh·kw·Cout]`), `b:[Cout]`.
    /// `geom` describes the forward convolution this op is the adjoint of.
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    /// 2×2 disjoint-window max; `idx` holds the flat input index of each
    /// window's (first) maximum, recorded at forward time.
    MaxPool2d { x: NodeId, idx: Vec<u32> },
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Row-wise softmax over the last axis, computed with max subtraction.
    Softmax(NodeId),
    /// Inverted dropout: `mask` entries are `0` or `1/(1-rate)`.
    Dropout { x: NodeId, mask: Vec<T> },
    Reshape(NodeId),
    /// Concatenation along the last axis; `split` is the first input's width.
    Concat { a: NodeId, b: NodeId, split: usize },
    /// Scalar `Σ (a-b)²` over all elements.
    L2Sq(NodeId, NodeId),
    /// Scalar `Σ |x|`.
    L1(NodeId),
    /// Scalar `-(1/B)·Σ target·ln(pred + 1e-12)` over `[B,k]` rows.
    Cce { pred: NodeId, target: NodeId },
    /// Scalar `max(p[class] - max_{i≠class} p[i], -kappa)` on a probability
    /// vector; the attack-loss hinge used by per-instance explanation search.
    FKappa {
        probs: NodeId,
        class: usize,
        kappa: T,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Define-by-run tape. See module docs.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`, if one was
    /// accumulated. Leaves registered with `needs_grad = true` always have
    /// one after `backward` (zeros when the loss does not depend on them).
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Like [`Graph::grad`] but a missing buffer is a contract violation
    /// (used when pulling gradients for an optimizer step).
    pub fn grad_ref(&self, id: NodeId) -> Result<&[T]> {
        self.grad(id).ok_or_else(|| {
            TensorError::Contract(format!("no gradient accumulated for node {}", id.0))
        })
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- leaves ------------------------------------------------------------

    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Constant input: shorthand for a no-grad leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    // ---- elementwise / shape ops -------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(
                "add",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data: Vec<T> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let tx = self.value(x);
        let data: Vec<T> = tx.data().iter().map(|&v| v * c).collect();
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        let n: usize = shape.iter().product();
        if n != tx.len() {
            return Err(TensorError::dim(
                "reshape",
                format!("{} elements", tx.len()),
                format!("{:?} = {} elements", shape, n),
            ));
        }
        let value = Tensor::from_parts(shape.to_vec(), tx.data().to_vec());
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let ok = sa.len() == sb.len()
            && !sa.is_empty()
            && sa[..sa.len() - 1] == sb[..sb.len() - 1];
        if !ok {
            return Err(TensorError::dim(
                "concat",
                format!("{:?} with matching leading dims", sa),
                format!("{:?}", sb),
            ));
        }
        let (wa, wb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = ta.len() / wa.max(1);
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * wa..(r + 1) * wa]);
            data.extend_from_slice(&tb.data()[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = wa + wb;
        let value = Tensor::from_parts(shape, data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat { a, b, split: wa }, ng))
    }

    // ---- layers ------------------------------------------------------------

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw, sb) = (tx.shape(), tw.shape(), tb.shape());
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 || sx[1] != sw[0] || sw[1] != sb[0] {
            return Err(TensorError::dim(
                "dense",
                "x:[B,n] w:[n,m] b:[m]".to_string(),
                format!("x:{:?} w:{:?} b:{:?}", sx, sw, sb),
            ));
        }
        let (batch, n, m) = (sx[0], sx[1], sw[1]);
        let mut out = vec![T::ZERO; batch * m];
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(tb.data());
        }
        gemm_nn(batch, n, m, tx.data(), tw.data(), &mut out);
        let value = Tensor::from_parts(vec![batch, m], out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Dense { x, w, b }, ng))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw, sb) = (tx.shape(), tw.shape(), tb.shape());
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 || sx[3] != sw[2] || sw[3] != sb[0] {
            return Err(TensorError::dim(
                "conv2d",
                "x:[B,H,W,Cin] w:[kh,kw,Cin,Cout] b:[Cout]".to_string(),
                format!("x:{:?} w:{:?} b:{:?}", sx, sw, sb),
            ));
        }
        let (batch, c_in, c_out) = (sx[0], sx[3], sw[3]);
        let geom = ConvGeom::new(sx[1], sx[2], sw[0], sw[1], stride, padding)?;
        let rows = geom.rows(batch);
        let patch = geom.patch_len(c_in);
        let mut cols = vec![T::ZERO; rows * patch];
        im2col(tx.data(), batch, c_in, &geom, &mut cols);
        let mut out = vec![T::ZERO; rows * c_out];
        for row in out.chunks_exact_mut(c_out) {
            row.copy_from_slice(tb.data());
        }
        gemm_nn(rows, patch, c_out, &cols, tw.data(), &mut out);
        let value = Tensor::from_parts(vec![batch, geom.h_out, geom.w_out, c_out], out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw, sb) = (tx.shape(), tw.shape(), tb.shape());
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 || sx[3] != sw[0] || sw[3] != sb[0] {
            return Err(TensorError::dim(
                "conv_transpose2d",
                "x:[B,h,w,Cin] w:[Cin,kh,kw,Cout] b:[Cout]".to_string(),
                format!("x:{:?} w:{:?} b:{:?}", sx, sw, sb),
            ));
        }
        let (batch, c_in, c_out) = (sx[0], sx[3], sw[3]);
        let geom = ConvGeom::for_transpose(sx[1], sx[2], sw[1], sw[2], stride)?;
        debug_assert_eq!((geom.h_out, geom.w_out), (sx[1], sx[2]));
        let rows = geom.rows(batch);
        let patch = geom.patch_len(c_out);
        // cols[r, :] = x[r, :] · w   (w viewed as [Cin, patch])
        let mut cols = vec![T::ZERO; rows * patch];
        gemm_nn(rows, c_in, patch, tx.data(), tw.data(), &mut cols);
        let out_len = batch * geom.h_in * geom.w_in * c_out;
        let mut out = vec![T::ZERO; out_len];
        col2im(&cols, batch, c_out, &geom, &mut out);
        for row in out.chunks_exact_mut(c_out) {
            for (o, &bias) in row.iter_mut().zip(tb.data()) {
                *o += bias;
            }
        }
        let value = Tensor::from_parts(vec![batch, geom.h_in, geom.w_in, c_out], out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, ng))
    }

    /// 2×2 max pooling over disjoint windows; spatial dims must be even.
    pub fn maxpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let sx = tx.shape();
        if sx.len() != 4 || sx[1] % 2 != 0 || sx[2] % 2 != 0 {
            return Err(TensorError::dim(
                "maxpool2d",
                "x:[B,H,W,C] with even H,W".to_string(),
                format!("x:{:?}", sx),
            ));
        }
        let (batch, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (ho, wo) = (h / 2, w / 2);
        let data = tx.data();
        let mut out = vec![T::ZERO; batch * ho * wo * c];
        let mut idx = vec![0u32; out.len()];
        for bi in 0..batch {
            for oh in 0..ho {
                for ow in 0..wo {
                    for ch in 0..c {
                        let base = ((bi * h + oh * 2) * w + ow * 2) * c + ch;
                        let cand = [base, base + c, base + w * c, base + w * c + c];
                        let mut best = cand[0];
                        for &k in &cand[1..] {
                            if data[k] > data[best] {
                                best = k;
                            }
                        }
                        let o = ((bi * ho + oh) * wo + ow) * c + ch;
                        out[o] = data[best];
                        idx[o] = best as u32;
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, ho, wo, c], out);
        let ng = self.needs(x);
        Ok(self.push(value, Op::MaxPool2d { x, idx }, ng))
    }

    // ---- activations ---------------------------------------------------------

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let data: Vec<T> = tx.data().iter().map(|&v| v.max(T::ZERO)).collect();
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let data: Vec<T> = tx
            .data()
            .iter()
            .map(|&v| {
                // Branch on sign so neither tail overflows the exp.
                if v >= T::ZERO {
                    T::ONE / (T::ONE + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::ONE + e)
                }
            })
            .collect();
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    /// Softmax over the last axis with per-row max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let sx = tx.shape();
        let k = *sx.last().ok_or_else(|| {
            TensorError::dim("softmax", "rank >= 1", "scalar".to_string())
        })?;
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(k) {
            let mut m = row[0];
            for &v in row.iter() {
                m = m.max(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::from_parts(sx.to_vec(), data);
        let ng = self.needs(x);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    /// Inverted dropout. `training = false` is the identity (returns `x`
    /// itself; no node is added). The mask is sampled here, once, from `rng`.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!(
                "dropout rate {} outside [0,1)",
                rate
            )));
        }
        if !training {
            return Ok(x);
        }
        let tx = self.value(x);
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..tx.len())
            .map(|_| {
                if rng.uniform() < rate {
                    T::ZERO
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<T> = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, ng))
    }

    // ---- losses (scalar outputs) ---------------------------------------------

    /// `Σ (a-b)²` summed over every element.
    pub fn l2_sq(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(
                "l2_sq",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let s: T = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::L2Sq(a, b), ng))
    }

    /// `Σ |x|` summed over every element.
    pub fn l1(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).data().iter().map(|&v| v.abs()).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::L1(x), ng)
    }

    /// Categorical cross-entropy, mean over batch rows:
    /// `-(1/B) Σ_b Σ_k target·ln(pred + 1e-12)`.
    pub fn cce(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (tp, tt) = (self.value(pred), self.value(target));
        let (sp, st) = (tp.shape(), tt.shape());
        if sp != st || sp.len() != 2 {
            return Err(TensorError::dim(
                "cce",
                format!("pred and target both [B,k], got pred {:?}", sp),
                format!("target {:?}", st),
            ));
        }
        let batch = sp[0];
        let eps = T::from_f64(1e-12);
        let mut total = T::ZERO;
        for (&p, &t) in tp.data().iter().zip(tt.data()) {
            total += t * (p + eps).ln();
        }
        let loss = -total / T::from_f64(batch as f64);
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(loss), Op::Cce { pred, target }, ng))
    }

    /// Hinged class-attack margin on a probability vector:
    /// `max(p[class] - max_{i≠class} p[i], -kappa)`.
    pub fn fkappa(&mut self, probs: NodeId, class: usize, kappa: T) -> Result<NodeId> {
        let tp = self.value(probs);
        if tp.len() < 2 || class >= tp.len() {
            return Err(TensorError::dim(
                "fkappa",
                format!("probability vector with class {} in range", class),
                format!("{:?}", tp.shape()),
            ));
        }
        let (py, pmax) = fkappa_parts(tp.data(), class);
        let val = (py - pmax).max(-kappa);
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(val),
            Op::FKappa {
                probs,
                class,
                kappa,
            },
            ng,
        ))
    }

    // ---- backward --------------------------------------------------------------

    /// Reverse sweep from `loss` (which must hold exactly one element).
    /// Populates gradients for every `needs_grad` node the loss depends on;
    /// `needs_grad` leaves the loss does *not* reach get explicit zeros so
    /// optimizer pulls never see a hole.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a single-element loss, got shape {:?}",
                lt.shape()
            )));
        }
        let lv = lt.data()[0];
        if !lv.is_finite() {
            return Err(TensorError::NonFinite {
                context: "loss value entering backward".to_string(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad {
                if let Op::Leaf = node.op {
                    self.grads[i] = Some(vec![T::ZERO; node.value.len()]);
                }
            }
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // loss depends on no trainable leaf: all-zero grads
        }
        *self.ensure_grad(loss) = vec![T::ONE];

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(up) = self.grads[i].take() else {
                continue;
            };
            self.step_back(i, &up);
            // Leaves keep their accumulated gradient; interior nodes are done
            // with theirs, so drop the buffer unless someone re-reads it.
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(up);
            } else if i == loss.0 {
                self.grads[i] = Some(up);
            }
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: NodeId) -> &mut Vec<T> {
        let n = self.nodes[id.0].value.len();
        self.grads[id.0].get_or_insert_with(|| vec![T::ZERO; n])
    }

    /// Accumulate `contribution(out_buffer)` into `id`'s gradient if it wants one.
    fn acc_with(&mut self, id: NodeId, f: impl FnOnce(&mut [T])) {
        if self.needs(id) {
            f(self.ensure_grad(id));
        }
    }

    fn step_back(&mut self, i: usize, up: &[T]) {
        // `Op` variants only reference earlier nodes, so reading input values
        // while writing input gradients is safe through split borrows below.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.acc_with(a, |g| {
                    for (gv, &u) in g.iter_mut().zip(up) {
                        *gv += u;
                    }
                });
                self.acc_with(b, |g| {
                    for (gv, &u) in g.iter_mut().zip(up) {
                        *gv += u;
                    }
                });
            }
            &Op::Scale(x, c) => {
                self.acc_with(x, |g| {
                    for (gv, &u) in g.iter_mut().zip(up) {
                        *gv += u * c;
                    }
                });
            }
            &Op::Dense { x, w, b } => {
                let (batch, n) = {
                    let sx = self.value(x).shape();
                    (sx[0], sx[1])
                };
                let m = self.value(w).shape()[1];
                if self.needs(w) {
                    let mut dw = vec![T::ZERO; n * m];
                    gemm_tn(batch, n, m, self.value(x).data(), up, &mut dw);
                    self.acc_with(w, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dw) {
                            *gv += *dv;
                        }
                    });
                }
                if self.needs(b) {
                    self.acc_with(b, |g| {
                        for row in up.chunks_exact(m) {
                            for (gv, &u) in g.iter_mut().zip(row) {
                                *gv += u;
                            }
                        }
                    });
                }
                if self.needs(x) {
                    let mut wt = vec![T::ZERO; m * n];
                    transpose(n, m, self.value(w).data(), &mut wt);
                    let mut dx = vec![T::ZERO; batch * n];
                    gemm_nn(batch, m, n, up, &wt, &mut dx);
                    self.acc_with(x, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dx) {
                            *gv += *dv;
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let sx = self.value(x).shape().to_vec();
                let (batch, c_in) = (sx[0], sx[3]);
                let c_out = self.value(w).shape()[3];
                let rows = geom.rows(batch);
                let patch = geom.patch_len(c_in);
                if self.needs(w) {
                    // Patches are recomputed rather than cached: the gather is
                    // cheap next to the matmuls and the tape stays small.
                    let mut cols = vec![T::ZERO; rows * patch];
                    im2col(self.value(x).data(), batch, c_in, &geom, &mut cols);
                    let mut dw = vec![T::ZERO; patch * c_out];
                    gemm_tn(rows, patch, c_out, &cols, up, &mut dw);
                    self.acc_with(w, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dw) {
                            *gv += *dv;
                        }
                    });
                }
                if self.needs(b) {
                    self.acc_with(b, |g| {
                        for row in up.chunks_exact(c_out) {
                            for (gv, &u) in g.iter_mut().zip(row) {
                                *gv += u;
                            }
                        }
                    });
                }
                if self.needs(x) {
                    let mut wt = vec![T::ZERO; c_out * patch];
                    transpose(patch, c_out, self.value(w).data(), &mut wt);
                    let mut dcols = vec![T::ZERO; rows * patch];
                    gemm_nn(rows, c_out, patch, up, &wt, &mut dcols);
                    let mut dx = vec![T::ZERO; batch * geom.h_in * geom.w_in * c_in];
                    col2im(&dcols, batch, c_in, &geom, &mut dx);
                    self.acc_with(x, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dx) {
                            *gv += *dv;
                        }
                    });
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let sx = self.value(x).shape().to_vec();
                let (batch, c_in) = (sx[0], sx[3]);
                let c_out = self.value(w).shape()[3];
                let rows = geom.rows(batch);
                let patch = geom.patch_len(c_out);
                // Shared by both weight and input grads: dcols = im2col(dy).
                let mut dcols = vec![T::ZERO; rows * patch];
                im2col(up, batch, c_out, &geom, &mut dcols);
                if self.needs(w) {
                    let mut dw = vec![T::ZERO; c_in * patch];
                    gemm_tn(rows, c_in, patch, self.value(x).data(), &dcols, &mut dw);
                    self.acc_with(w, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dw) {
                            *gv += *dv;
                        }
                    });
                }
                if self.needs(b) {
                    self.acc_with(b, |g| {
                        for row in up.chunks_exact(c_out) {
                            for (gv, &u) in g.iter_mut().zip(row) {
                                *gv += u;
                            }
                        }
                    });
                }
                if self.needs(x) {
                    let mut wt = vec![T::ZERO; patch * c_in];
                    transpose(c_in, patch, self.value(w).data(), &mut wt);
                    let mut dx = vec![T::ZERO; rows * c_in];
                    gemm_nn(rows, patch, c_in, &dcols, &wt, &mut dx);
                    self.acc_with(x, |g| {
                        for (gv, dv) in g.iter_mut().zip(&dx) {
                            *gv += *dv;
                        }
                    });
                }
            }
            Op::MaxPool2d { x, idx: _ } => {
                let x = *x;
                // Split the borrow: `idx` lives in node i, gradient goes to x < i.
                let (head, tail) = self.nodes.split_at(i);
                let Op::MaxPool2d { idx, .. } = &tail[0].op else {
                    unreachable!()
                };
                if head[x.0].needs_grad {
                    let n = head[x.0].value.len();
                    let g = self.grads[x.0].get_or_insert_with(|| vec![T::ZERO; n]);
                    for (&src, &u) in idx.iter().zip(up) {
                        g[src as usize] += u;
                    }
                }
            }
            &Op::Relu(x) => {
                let mut dx = vec![T::ZERO; up.len()];
                for ((d, &v), &u) in dx.iter_mut().zip(self.value(x).data()).zip(up) {
                    if v > T::ZERO {
                        *d = u;
                    }
                }
                self.acc_with(x, |g| {
                    for (gv, dv) in g.iter_mut().zip(&dx) {
                        *gv += *dv;
                    }
                });
            }
            &Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data();
                let dx: Vec<T> = y
                    .iter()
                    .zip(up)
                    .map(|(&yv, &u)| u * yv * (T::ONE - yv))
                    .collect();
                self.acc_with(x, |g| {
                    for (gv, dv) in g.iter_mut().zip(&dx) {
                        *gv += *dv;
                    }
                });
            }
            &Op::Softmax(x) => {
                let y = self.nodes[i].value.data();
                let k = *self.nodes[i].value.shape().last().unwrap();
                let mut dx = vec![T::ZERO; y.len()];
                for ((drow, yrow), urow) in dx
                    .chunks_exact_mut(k)
                    .zip(y.chunks_exact(k))
                    .zip(up.chunks_exact(k))
                {
                    let dot: T = yrow.iter().zip(urow).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &u) in drow.iter_mut().zip(yrow).zip(urow) {
                        *d = yv * (u - dot);
                    }
                }
                self.acc_with(x, |g| {
                    for (gv, dv) in g.iter_mut().zip(&dx) {
                        *gv += *dv;
                    }
                });
            }
            Op::Dropout { x, .. } => {
                let x = *x;
                let (head, tail) = self.nodes.split_at(i);
                let Op::Dropout { mask, .. } = &tail[0].op else {
                    unreachable!()
                };
                if head[x.0].needs_grad {
                    let n = head[x.0].value.len();
                    let g = self.grads[x.0].get_or_insert_with(|| vec![T::ZERO; n]);
                    for ((gv, &m), &u) in g.iter_mut().zip(mask).zip(up) {
                        *gv += u * m;
                    }
                }
            }
            &Op::Reshape(x) => {
                self.acc_with(x, |g| {
                    for (gv, &u) in g.iter_mut().zip(up) {
                        *gv += u;
                    }
                });
            }
            &Op::Concat { a, b, split } => {
                let wa = split;
                let wtot = *self.nodes[i].value.shape().last().unwrap();
                let wb = wtot - wa;
                self.acc_with(a, |g| {
                    for (grow, urow) in g.chunks_exact_mut(wa).zip(up.chunks_exact(wtot)) {
                        for (gv, &u) in grow.iter_mut().zip(&urow[..wa]) {
                            *gv += u;
                        }
                    }
                });
                self.acc_with(b, |g| {
                    for (grow, urow) in g.chunks_exact_mut(wb).zip(up.chunks_exact(wtot)) {
                        for (gv, &u) in grow.iter_mut().zip(&urow[wa..]) {
                            *gv += u;
                        }
                    }
                });
            }
            &Op::L2Sq(a, b) => {
                let u = up[0];
                let two = T::from_f64(2.0);
                let diff: Vec<T> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| two * (x - y) * u)
                    .collect();
                self.acc_with(a, |g| {
                    for (gv, dv) in g.iter_mut().zip(&diff) {
                        *gv += *dv;
                    }
                });
                self.acc_with(b, |g| {
                    for (gv, dv) in g.iter_mut().zip(&diff) {
                        *gv -= *dv;
                    }
                });
            }
            &Op::L1(x) => {
                let u = up[0];
                let dx: Vec<T> = self
                    .value(x)
                    .data()
                    .iter()
                    .map(|&v| {
                        if v > T::ZERO {
                            u
                        } else if v < T::ZERO {
                            -u
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                self.acc_with(x, |g| {
                    for (gv, dv) in g.iter_mut().zip(&dx) {
                        *gv += *dv;
                    }
                });
            }
            &Op::Cce { pred, target } => {
                let u = up[0];
                let batch = self.value(pred).shape()[0];
                let eps = T::from_f64(1e-12);
                let scale = -u / T::from_f64(batch as f64);
                let dp: Vec<T> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&p, &t)| scale * t / (p + eps))
                    .collect();
                self.acc_with(pred, |g| {
                    for (gv, dv) in g.iter_mut().zip(&dp) {
                        *gv += *dv;
                    }
                });
                // Gradients w.r.t. one-hot targets are never consumed here;
                // targets are data leaves, so nothing accumulates.
            }
            &Op::FKappa {
                probs,
                class,
                kappa,
            } => {
                let u = up[0];
                let (py, pmax, jmax) = fkappa_argparts(self.value(probs).data(), class);
                if py - pmax > -kappa {
                    self.acc_with(probs, |g| {
                        g[class] += u;
                        g[jmax] -= u;
                    });
                }
            }
        }
    }
}

/// `(p[class], max_{i != class} p[i])`.
fn fkappa_parts<T: Real>(p: &[T], class: usize) -> (T, T) {
    let (py, pmax, _) = fkappa_argparts(p, class);
    (py, pmax)
}

/// Same, also returning the index of the competing maximum (first on ties).
fn fkappa_argparts<T: Real>(p: &[T], class: usize) -> (T, T, usize) {
    let mut jmax = usize::MAX;
    for (j, &v) in p.iter().enumerate() {
        if j == class {
            continue;
        }
        if jmax == usize::MAX || v > p[jmax] {
            jmax = j;
        }
    }
    (p[class], p[jmax], jmax)
}
