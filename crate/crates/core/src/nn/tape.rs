//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! Every forward op appends one node holding its output value, the parent
//! node ids, and enough payload to compute exact analytic gradients on the
//! reverse sweep. Parameters enter as leaf nodes that remember their
//! [`ParamId`], so `accumulate_param_grads` can flush gradients back into the
//! owning [`ParamStore`] after `backward`.
//!
//! The op set is closed and small: exactly what the fusion model needs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::{softmax_row, Tensor};

/// Additive pre-softmax penalty for masked keys. Large enough that the
/// shifted exponent underflows to exactly 0.0 in f64.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// `a[..., k] · w[k, n]`, batching over all leading axes of `a`.
    MatMulLast,
    /// `a[B, m, k] · b[B, k, n]`, or `a · bᵀ` when `transpose_b`.
    BatchMatMul { transpose_b: bool },
    /// Broadcast-add a `[n]` bias over the last axis.
    AddBias,
    Add,
    AddConst,
    Scale { factor: f64 },
    Relu,
    SoftmaxLast,
    /// Normalize the last axis; parents are `[x, gamma, beta]`.
    LayerNorm { eps: f64 },
    /// Mask entries are 0.0 (dropped) or 1/(1-rate) (kept, rescaled).
    Dropout { mask: Vec<f64> },
    /// Gather rows of the parent table; `ids` is `batch * seq` long.
    Embedding { ids: Vec<usize> },
    /// Mean over non-masked sequence positions of `[b, s, d]`.
    MeanPoolMasked { mask: Vec<bool>, inv_counts: Vec<f64> },
    ConcatLast,
    /// `[b, s, d]` -> `[b*h, s, d/h]`.
    SplitHeads { batch: usize, seq: usize, heads: usize },
    /// `[b*h, s, dh]` -> `[b, s, h*dh]`.
    MergeHeads { batch: usize, seq: usize, heads: usize },
    /// Additive key-padding penalty on `[b*h, q, k]` scores; backward is
    /// the identity.
    KeyPaddingMask,
    /// Scalar sum of all elements.
    Sum,
    /// Mean NLL of the true class over the batch; parent is `[b, k]` logits.
    CrossEntropyLogits { labels: Vec<usize> },
    /// Mean squared error; parents are `[pred, target]` of equal shape.
    MseLoss,
}

pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    parents: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
    param_leaves: BTreeMap<usize, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            parents: Vec::new(),
            grads: Vec::new(),
            param_leaves: BTreeMap::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` root with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, parents: Vec<usize>) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.values.push(value);
        self.ops.push(op);
        self.parents.push(parents);
        self.grads.push(None);
        NodeId(self.values.len() - 1)
    }

    /// Constant input leaf (no gradient destination).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, vec![])
    }

    /// Parameter leaf; repeated requests for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_leaves.get(&id.index()) {
            return NodeId(node);
        }
        let node = self.push(store.node(id).value.clone(), Op::Leaf, vec![]);
        self.param_leaves.insert(id.index(), node.0);
        node
    }

    pub fn matmul_last(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (av, wv) = (&self.values[a.0], &self.values[w.0]);
        if wv.shape().len() != 2 {
            return Err(CoreError::Shape(format!(
                "matmul weight must be 2-D, got {:?}",
                wv.shape()
            )));
        }
        let k = av.last_dim();
        let (wk, n) = (wv.shape()[0], wv.shape()[1]);
        if k != wk {
            return Err(CoreError::Shape(format!(
                "matmul inner dims differ: {k} vs {wk}"
            )));
        }
        let rows = av.numel() / k;
        let mut out = vec![0.0; rows * n];
        let (ad, wd) = (av.data(), wv.data());
        for r in 0..rows {
            let a_row = &ad[r * k..(r + 1) * k];
            let out_row = &mut out[r * n..(r + 1) * n];
            for (kk, &aval) in a_row.iter().enumerate() {
                let w_row = &wd[kk * n..(kk + 1) * n];
                for j in 0..n {
                    out_row[j] += aval * w_row[j];
                }
            }
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMulLast, vec![a.0, w.0]))
    }

    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let (ashape, bshape) = (av.shape(), bv.shape());
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] {
            return Err(CoreError::Shape(format!(
                "batch matmul needs matching 3-D operands, got {ashape:?} and {bshape:?}"
            )));
        }
        let (batches, m, k) = (ashape[0], ashape[1], ashape[2]);
        let (bk, n) = if transpose_b {
            (bshape[2], bshape[1])
        } else {
            (bshape[1], bshape[2])
        };
        if k != bk {
            return Err(CoreError::Shape(format!(
                "batch matmul inner dims differ: {k} vs {bk}"
            )));
        }
        let mut out = vec![0.0; batches * m * n];
        let (ad, bd) = (av.data(), bv.data());
        let bstride = bshape[1] * bshape[2];
        for bi in 0..batches {
            let a_mat = &ad[bi * m * k..(bi + 1) * m * k];
            let b_mat = &bd[bi * bstride..(bi + 1) * bstride];
            let out_mat = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                let a_row = &a_mat[i * k..(i + 1) * k];
                let out_row = &mut out_mat[i * n..(i + 1) * n];
                if transpose_b {
                    for j in 0..n {
                        let b_row = &b_mat[j * k..(j + 1) * k];
                        let mut acc = 0.0;
                        for kk in 0..k {
                            acc += a_row[kk] * b_row[kk];
                        }
                        out_row[j] = acc;
                    }
                } else {
                    for (kk, &aval) in a_row.iter().enumerate() {
                        let b_row = &b_mat[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            out_row[j] += aval * b_row[j];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![batches, m, n], out)?,
            Op::BatchMatMul { transpose_b },
            vec![a.0, b.0],
        ))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.values[x.0], &self.values[bias.0]);
        let n = xv.last_dim();
        if bv.shape() != [n] {
            return Err(CoreError::Shape(format!(
                "bias shape {:?} does not match last dim {n}",
                bv.shape()
            )));
        }
        let bd = bv.data();
        let mut out = xv.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bd[i % n];
        }
        Ok(self.push(
            Tensor::new(xv.shape().to_vec(), out)?,
            Op::AddBias,
            vec![x.0, bias.0],
        ))
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xv, yv) = (&self.values[x.0], &self.values[y.0]);
        if xv.shape() != yv.shape() {
            return Err(CoreError::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                xv.shape(),
                yv.shape()
            )));
        }
        let out: Vec<f64> = xv.data().iter().zip(yv.data()).map(|(a, b)| a + b).collect();
        Ok(self.push(Tensor::new(xv.shape().to_vec(), out)?, Op::Add, vec![x.0, y.0]))
    }

    /// Add a constant tensor (e.g. position encodings); gradient passes through.
    pub fn add_const(&mut self, x: NodeId, c: &Tensor) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape() != c.shape() {
            return Err(CoreError::Shape(format!(
                "add_const shape mismatch: {:?} vs {:?}",
                xv.shape(),
                c.shape()
            )));
        }
        let out: Vec<f64> = xv.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        Ok(self.push(Tensor::new(xv.shape().to_vec(), out)?, Op::AddConst, vec![x.0]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.values[x.0].data().iter().map(|v| v * factor).collect();
        let shape = self.values[x.0].shape().to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Scale { factor },
            vec![x.0],
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.values[x.0].data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.values[x.0].shape().to_vec();
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Relu, vec![x.0])
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let n = xv.last_dim();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(n) {
            out.extend(softmax_row(row));
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::SoftmaxLast,
            vec![x.0],
        )
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv, bv) = (&self.values[x.0], &self.values[gamma.0], &self.values[beta.0]);
        let n = xv.last_dim();
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(CoreError::Shape(format!(
                "layer norm affine params must be [{n}], got {:?} and {:?}",
                gv.shape(),
                bv.shape()
            )));
        }
        let (gd, bd) = (gv.data(), bv.data());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out.push((row[j] - mean) * inv * gd[j] + bd[j]);
            }
        }
        Ok(self.push(
            Tensor::new(xv.shape().to_vec(), out)?,
            Op::LayerNorm { eps },
            vec![x.0, gamma.0, beta.0],
        ))
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). Identity in evaluation mode or at rate 0.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(CoreError::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = &self.values[x.0];
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.gen::<f64>() >= rate { keep_scale } else { 0.0 })
            .collect();
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { mask }, vec![x.0]))
    }

    /// Gather embedding rows for `batch * seq` token ids.
    pub fn embedding(
        &mut self,
        table: NodeId,
        ids: &[u32],
        batch: usize,
        seq: usize,
    ) -> Result<NodeId> {
        let tv = &self.values[table.0];
        if tv.shape().len() != 2 {
            return Err(CoreError::Shape("embedding table must be 2-D".into()));
        }
        let (vocab, dim) = (tv.shape()[0], tv.shape()[1]);
        if ids.len() != batch * seq {
            return Err(CoreError::Shape(format!(
                "expected {} ids, got {}",
                batch * seq,
                ids.len()
            )));
        }
        let mut owned = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(CoreError::Data(format!(
                    "token id {id} out of range for vocab of {vocab}"
                )));
            }
            owned.push(id);
        }
        let td = tv.data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in &owned {
            out.extend_from_slice(&td[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            Tensor::new(vec![batch, seq, dim], out)?,
            Op::Embedding { ids: owned },
            vec![table.0],
        ))
    }

    /// Mean over unmasked positions per batch row: `[b, s, d]` -> `[b, d]`.
    /// `mask[b*s]` marks real (non-padding) tokens.
    pub fn mean_pool_masked(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 3 {
            return Err(CoreError::Shape("mean pool expects [b, s, d]".into()));
        }
        let (b, s, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if mask.len() != b * s {
            return Err(CoreError::Shape("mask length mismatch".into()));
        }
        let mut inv_counts = Vec::with_capacity(b);
        for bi in 0..b {
            let count = mask[bi * s..(bi + 1) * s].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(CoreError::Config(format!(
                    "batch row {bi} has no unmasked tokens to pool"
                )));
            }
            inv_counts.push(1.0 / count as f64);
        }
        let xd = xv.data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            for si in 0..s {
                if mask[bi * s + si] {
                    let src = &xd[(bi * s + si) * d..(bi * s + si + 1) * d];
                    let dst = &mut out[bi * d..(bi + 1) * d];
                    for j in 0..d {
                        dst[j] += src[j] * inv_counts[bi];
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b, d], out)?,
            Op::MeanPoolMasked { mask: mask.to_vec(), inv_counts },
            vec![x.0],
        ))
    }

    pub fn concat_last(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xv, yv) = (&self.values[x.0], &self.values[y.0]);
        if xv.shape().len() != 2 || yv.shape().len() != 2 || xv.shape()[0] != yv.shape()[0] {
            return Err(CoreError::Shape(format!(
                "concat expects matching 2-D batches, got {:?} and {:?}",
                xv.shape(),
                yv.shape()
            )));
        }
        let (b, n1, n2) = (xv.shape()[0], xv.shape()[1], yv.shape()[1]);
        let mut out = Vec::with_capacity(b * (n1 + n2));
        for bi in 0..b {
            out.extend_from_slice(&xv.data()[bi * n1..(bi + 1) * n1]);
            out.extend_from_slice(&yv.data()[bi * n2..(bi + 1) * n2]);
        }
        Ok(self.push(
            Tensor::new(vec![b, n1 + n2], out)?,
            Op::ConcatLast,
            vec![x.0, y.0],
        ))
    }

    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 3 {
            return Err(CoreError::Shape("split_heads expects [b, s, d]".into()));
        }
        let (b, s, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if heads == 0 || d % heads != 0 {
            return Err(CoreError::Config(format!(
                "hidden dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let xd = xv.data();
        let mut out = vec![0.0; b * s * d];
        for bi in 0..b {
            for si in 0..s {
                for hi in 0..heads {
                    let src = (bi * s + si) * d + hi * dh;
                    let dst = ((bi * heads + hi) * s + si) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b * heads, s, dh], out)?,
            Op::SplitHeads { batch: b, seq: s, heads },
            vec![x.0],
        ))
    }

    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 3 || xv.shape()[0] % heads != 0 {
            return Err(CoreError::Shape(format!(
                "merge_heads expects [b*h, s, dh] with h={heads}, got {:?}",
                xv.shape()
            )));
        }
        let (bh, s, dh) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let b = bh / heads;
        let d = dh * heads;
        let xd = xv.data();
        let mut out = vec![0.0; b * s * d];
        for bi in 0..b {
            for hi in 0..heads {
                for si in 0..s {
                    let src = ((bi * heads + hi) * s + si) * dh;
                    let dst = (bi * s + si) * d + hi * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b, s, d], out)?,
            Op::MergeHeads { batch: b, seq: s, heads },
            vec![x.0],
        ))
    }

    /// Add [`MASK_NEG`] to score columns of padding keys. `mask[b*s]` marks
    /// real tokens; scores are `[b*h, q, s]`.
    pub fn key_padding_mask(&mut self, scores: NodeId, mask: &[bool], heads: usize) -> Result<NodeId> {
        let sv = &self.values[scores.0];
        if sv.shape().len() != 3 || sv.shape()[0] % heads != 0 {
            return Err(CoreError::Shape("key mask expects [b*h, q, k] scores".into()));
        }
        let (bh, q, kdim) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
        let b = bh / heads;
        if mask.len() != b * kdim {
            return Err(CoreError::Shape(format!(
                "mask length {} does not match batch {b} x keys {kdim}",
                mask.len()
            )));
        }
        let mut out = sv.data().to_vec();
        for bhi in 0..bh {
            let bi = bhi / heads;
            for qi in 0..q {
                let row = &mut out[(bhi * q + qi) * kdim..(bhi * q + qi + 1) * kdim];
                for ki in 0..kdim {
                    if !mask[bi * kdim + ki] {
                        row[ki] += MASK_NEG;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(sv.shape().to_vec(), out)?,
            Op::KeyPaddingMask,
            vec![scores.0],
        ))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.values[x.0].data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum, vec![x.0])
    }

    /// Mean negative log-likelihood of the labeled class, computed through a
    /// stable log-sum-exp. Gradient is `(softmax - onehot) / batch`.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = &self.values[logits.0];
        if lv.shape().len() != 2 {
            return Err(CoreError::Shape("cross entropy expects [b, k] logits".into()));
        }
        let (b, k) = (lv.shape()[0], lv.shape()[1]);
        if labels.len() != b {
            return Err(CoreError::Shape(format!(
                "expected {b} labels, got {}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(CoreError::Data(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut total = 0.0;
        for (row, &label) in lv.data().chunks(k).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let loss = Tensor::scalar(total / b as f64);
        Ok(self.push(
            loss,
            Op::CrossEntropyLogits { labels: labels.to_vec() },
            vec![logits.0],
        ))
    }

    /// Mean squared error over all elements; gradient is `2(pred-target)/n`.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (pv, tv) = (&self.values[pred.0], &self.values[target.0]);
        if pv.shape() != tv.shape() {
            return Err(CoreError::Shape(format!(
                "mse shape mismatch: {:?} vs {:?}",
                pv.shape(),
                tv.shape()
            )));
        }
        let n = pv.numel() as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::MseLoss, vec![pred.0, target.0]))
    }

    /// `x · w + b` over the last axis.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let mm = self.matmul_last(x, w)?;
        self.add_bias(mm, b)
    }

    /// Reverse sweep from a scalar root. Gradients of parameter leaves stay
    /// on the tape until flushed with [`Tape::accumulate_param_grads`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_val = &self.values[root.0];
        if root_val.numel() != 1 {
            return Err(CoreError::Shape(format!(
                "backward root must be scalar, got {:?}",
                root_val.shape()
            )));
        }
        if !root_val.is_finite() {
            return Err(CoreError::Numeric("non-finite loss".into()));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(grad) = self.grads[i].clone() else {
                continue;
            };
            if !grad.is_finite() {
                return Err(CoreError::Numeric("non-finite gradient".into()));
            }
            let parent_ids = self.parents[i].clone();
            let parent_grads = self.op_backward(i, &grad, &parent_ids)?;
            for (pid, pgrad) in parent_ids.iter().zip(parent_grads) {
                match &mut self.grads[*pid] {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(pgrad.data()) {
                            *e += v;
                        }
                    }
                    slot => *slot = Some(pgrad),
                }
            }
        }
        Ok(())
    }

    /// Add leaf gradients into `store` (after `backward`).
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&pidx, &node) in &self.param_leaves {
            if let Some(g) = &self.grads[node] {
                let dst = store.node_mut(ParamId(pidx));
                for (d, s) in dst.grad.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }

    fn op_backward(&self, node: usize, grad: &Tensor, parents: &[usize]) -> Result<Vec<Tensor>> {
        let out = match &self.ops[node] {
            Op::Leaf => vec![],
            Op::MatMulLast => {
                let (av, wv) = (&self.values[parents[0]], &self.values[parents[1]]);
                let k = av.last_dim();
                let n = wv.shape()[1];
                let rows = av.numel() / k;
                let (ad, wd, gd) = (av.data(), wv.data(), grad.data());
                let mut ga = vec![0.0; av.numel()];
                let mut gw = vec![0.0; wv.numel()];
                for r in 0..rows {
                    let g_row = &gd[r * n..(r + 1) * n];
                    let a_row = &ad[r * k..(r + 1) * k];
                    let ga_row = &mut ga[r * k..(r + 1) * k];
                    for kk in 0..k {
                        let w_row = &wd[kk * n..(kk + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g_row[j] * w_row[j];
                        }
                        ga_row[kk] = acc;
                        let gw_row = &mut gw[kk * n..(kk + 1) * n];
                        let aval = a_row[kk];
                        for j in 0..n {
                            gw_row[j] += aval * g_row[j];
                        }
                    }
                }
                vec![
                    Tensor::new(av.shape().to_vec(), ga)?,
                    Tensor::new(wv.shape().to_vec(), gw)?,
                ]
            }
            Op::BatchMatMul { transpose_b } => {
                let (av, bv) = (&self.values[parents[0]], &self.values[parents[1]]);
                let (batches, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = if *transpose_b { bv.shape()[1] } else { bv.shape()[2] };
                let (ad, bd, gd) = (av.data(), bv.data(), grad.data());
                let mut ga = vec![0.0; av.numel()];
                let mut gb = vec![0.0; bv.numel()];
                let bstride = bv.shape()[1] * bv.shape()[2];
                for bi in 0..batches {
                    let a_mat = &ad[bi * m * k..(bi + 1) * m * k];
                    let b_mat = &bd[bi * bstride..(bi + 1) * bstride];
                    let g_mat = &gd[bi * m * n..(bi + 1) * m * n];
                    let ga_mat = &mut ga[bi * m * k..(bi + 1) * m * k];
                    let gb_mat = &mut gb[bi * bstride..(bi + 1) * bstride];
                    if *transpose_b {
                        // C = A·Bᵀ with B as [n, k]: dA = G·B, dB = Gᵀ·A.
                        for i in 0..m {
                            let g_row = &g_mat[i * n..(i + 1) * n];
                            let a_row = &a_mat[i * k..(i + 1) * k];
                            let ga_row = &mut ga_mat[i * k..(i + 1) * k];
                            for j in 0..n {
                                let b_row = &b_mat[j * k..(j + 1) * k];
                                let gval = g_row[j];
                                let gb_row = &mut gb_mat[j * k..(j + 1) * k];
                                for kk in 0..k {
                                    ga_row[kk] += gval * b_row[kk];
                                    gb_row[kk] += gval * a_row[kk];
                                }
                            }
                        }
                    } else {
                        // C = A·B: dA = G·Bᵀ, dB = Aᵀ·G.
                        for i in 0..m {
                            let g_row = &g_mat[i * n..(i + 1) * n];
                            let a_row = &a_mat[i * k..(i + 1) * k];
                            let ga_row = &mut ga_mat[i * k..(i + 1) * k];
                            for kk in 0..k {
                                let b_row = &b_mat[kk * n..(kk + 1) * n];
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g_row[j] * b_row[j];
                                }
                                ga_row[kk] += acc;
                                let gb_row = &mut gb_mat[kk * n..(kk + 1) * n];
                                let aval = a_row[kk];
                                for j in 0..n {
                                    gb_row[j] += aval * g_row[j];
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(av.shape().to_vec(), ga)?,
                    Tensor::new(bv.shape().to_vec(), gb)?,
                ]
            }
            Op::AddBias => {
                let bias_len = self.values[parents[1]].numel();
                let mut gb = vec![0.0; bias_len];
                for (i, g) in grad.data().iter().enumerate() {
                    gb[i % bias_len] += g;
                }
                vec![grad.clone(), Tensor::new(vec![bias_len], gb)?]
            }
            Op::Add => vec![grad.clone(), grad.clone()],
            Op::AddConst => vec![grad.clone()],
            Op::Scale { factor } => {
                let g: Vec<f64> = grad.data().iter().map(|v| v * factor).collect();
                vec![Tensor::new(grad.shape().to_vec(), g)?]
            }
            Op::Relu => {
                let xv = &self.values[parents[0]];
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Tensor::new(grad.shape().to_vec(), g)?]
            }
            Op::SoftmaxLast => {
                let yv = &self.values[node];
                let n = yv.last_dim();
                let mut gx = Vec::with_capacity(yv.numel());
                for (g_row, y_row) in grad.data().chunks(n).zip(yv.data().chunks(n)) {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                    gx.extend(g_row.iter().zip(y_row).map(|(g, y)| y * (g - dot)));
                }
                vec![Tensor::new(yv.shape().to_vec(), gx)?]
            }
            Op::LayerNorm { eps } => {
                let (xv, gv) = (&self.values[parents[0]], &self.values[parents[1]]);
                let n = xv.last_dim();
                let nf = n as f64;
                let gd = gv.data();
                let mut gx = Vec::with_capacity(xv.numel());
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for (x_row, g_row) in xv.data().chunks(n).zip(grad.data().chunks(n)) {
                    let mean = x_row.iter().sum::<f64>() / nf;
                    let var = x_row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xh: Vec<f64> = x_row.iter().map(|v| (v - mean) * inv).collect();
                    let gg: Vec<f64> = g_row.iter().zip(gd).map(|(g, gamma)| g * gamma).collect();
                    let mean_gg = gg.iter().sum::<f64>() / nf;
                    let mean_gg_xh = gg.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / nf;
                    for j in 0..n {
                        gx.push((gg[j] - mean_gg - xh[j] * mean_gg_xh) * inv);
                        ggamma[j] += g_row[j] * xh[j];
                        gbeta[j] += g_row[j];
                    }
                }
                vec![
                    Tensor::new(xv.shape().to_vec(), gx)?,
                    Tensor::new(vec![n], ggamma)?,
                    Tensor::new(vec![n], gbeta)?,
                ]
            }
            Op::Dropout { mask } => {
                let g: Vec<f64> = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                vec![Tensor::new(grad.shape().to_vec(), g)?]
            }
            Op::Embedding { ids } => {
                let tv = &self.values[parents[0]];
                let dim = tv.shape()[1];
                let mut gt = vec![0.0; tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    let src = &grad.data()[i * dim..(i + 1) * dim];
                    let dst = &mut gt[id * dim..(id + 1) * dim];
                    for j in 0..dim {
                        dst[j] += src[j];
                    }
                }
                vec![Tensor::new(tv.shape().to_vec(), gt)?]
            }
            Op::MeanPoolMasked { mask, inv_counts } => {
                let xv = &self.values[parents[0]];
                let (b, s, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut gx = vec![0.0; xv.numel()];
                for bi in 0..b {
                    let g_row = &grad.data()[bi * d..(bi + 1) * d];
                    for si in 0..s {
                        if mask[bi * s + si] {
                            let dst = &mut gx[(bi * s + si) * d..(bi * s + si + 1) * d];
                            for j in 0..d {
                                dst[j] = g_row[j] * inv_counts[bi];
                            }
                        }
                    }
                }
                vec![Tensor::new(xv.shape().to_vec(), gx)?]
            }
            Op::ConcatLast => {
                let (xv, yv) = (&self.values[parents[0]], &self.values[parents[1]]);
                let (b, n1, n2) = (xv.shape()[0], xv.shape()[1], yv.shape()[1]);
                let mut gx = Vec::with_capacity(b * n1);
                let mut gy = Vec::with_capacity(b * n2);
                for bi in 0..b {
                    let row = &grad.data()[bi * (n1 + n2)..(bi + 1) * (n1 + n2)];
                    gx.extend_from_slice(&row[..n1]);
                    gy.extend_from_slice(&row[n1..]);
                }
                vec![
                    Tensor::new(vec![b, n1], gx)?,
                    Tensor::new(vec![b, n2], gy)?,
                ]
            }
            Op::SplitHeads { batch, seq, heads } => {
                let (b, s, h) = (*batch, *seq, *heads);
                let dh = grad.shape()[2];
                let d = dh * h;
                let mut gx = vec![0.0; b * s * d];
                for bi in 0..b {
                    for si in 0..s {
                        for hi in 0..h {
                            let src = ((bi * h + hi) * s + si) * dh;
                            let dst = (bi * s + si) * d + hi * dh;
                            gx[dst..dst + dh].copy_from_slice(&grad.data()[src..src + dh]);
                        }
                    }
                }
                vec![Tensor::new(vec![b, s, d], gx)?]
            }
            Op::MergeHeads { batch, seq, heads } => {
                let (b, s, h) = (*batch, *seq, *heads);
                let d = grad.shape()[2];
                let dh = d / h;
                let mut gx = vec![0.0; b * h * s * dh];
                for bi in 0..b {
                    for hi in 0..h {
                        for si in 0..s {
                            let src = (bi * s + si) * d + hi * dh;
                            let dst = ((bi * h + hi) * s + si) * dh;
                            gx[dst..dst + dh].copy_from_slice(&grad.data()[src..src + dh]);
                        }
                    }
                }
                vec![Tensor::new(vec![b * h, s, dh], gx)?]
            }
            Op::KeyPaddingMask => vec![grad.clone()],
            Op::Sum => {
                let xv = &self.values[parents[0]];
                let g = grad.data()[0];
                vec![Tensor::new(xv.shape().to_vec(), vec![g; xv.numel()])?]
            }
            Op::CrossEntropyLogits { labels } => {
                let lv = &self.values[parents[0]];
                let (b, k) = (lv.shape()[0], lv.shape()[1]);
                let scale = grad.data()[0] / b as f64;
                let mut gl = Vec::with_capacity(b * k);
                for (row, &label) in lv.data().chunks(k).zip(labels) {
                    let probs = softmax_row(row);
                    for (j, p) in probs.into_iter().enumerate() {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gl.push((p - onehot) * scale);
                    }
                }
                vec![Tensor::new(vec![b, k], gl)?]
            }
            Op::MseLoss => {
                let (pv, tv) = (&self.values[parents[0]], &self.values[parents[1]]);
                let scale = 2.0 * grad.data()[0] / pv.numel() as f64;
                let gp: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(p, t)| (p - t) * scale)
                    .collect();
                let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                vec![
                    Tensor::new(pv.shape().to_vec(), gp)?,
                    Tensor::new(tv.shape().to_vec(), gt)?,
                ]
            }
        };
        Ok(out)
    }
}
