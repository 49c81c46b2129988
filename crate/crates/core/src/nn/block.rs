//! Multi-head self-attention encoder block.
//!
//! Post-norm layout: attention + residual + layer norm, then a ReLU
//! feed-forward + residual + layer norm. Padding keys receive an additive
//! penalty before the softmax so their attention weight underflows to zero.

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::params::{xavier_uniform, ParamId, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;

/// Parameter ids of one encoder block.
#[derive(Debug, Clone)]
pub struct AttentionBlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

impl AttentionBlockParams {
    /// Allocate all block parameters in `store` under a name prefix.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dim: usize,
        ff_dim: usize,
    ) -> Self {
        let mat = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i, o| {
            store.add(format!("{prefix}.{name}"), xavier_uniform(rng, i, o), true)
        };
        let wq = mat(store, rng, "wq", dim, dim);
        let wk = mat(store, rng, "wk", dim, dim);
        let wv = mat(store, rng, "wv", dim, dim);
        let wo = mat(store, rng, "wo", dim, dim);
        let ff1_w = mat(store, rng, "ff1_w", dim, ff_dim);
        let ff2_w = mat(store, rng, "ff2_w", ff_dim, dim);
        let zeros = |store: &mut ParamStore, name: &str, n: usize| {
            store.add(format!("{prefix}.{name}"), Tensor::zeros(vec![n]), true)
        };
        let ones = |store: &mut ParamStore, name: &str, n: usize| {
            store.add(
                format!("{prefix}.{name}"),
                Tensor::new(vec![n], vec![1.0; n]).expect("shape"),
                true,
            )
        };
        AttentionBlockParams {
            wq,
            bq: zeros(store, "bq", dim),
            wk,
            bk: zeros(store, "bk", dim),
            wv,
            bv: zeros(store, "bv", dim),
            wo,
            bo: zeros(store, "bo", dim),
            ln1_gamma: ones(store, "ln1_gamma", dim),
            ln1_beta: zeros(store, "ln1_beta", dim),
            ff1_w,
            ff1_b: zeros(store, "ff1_b", ff_dim),
            ff2_w,
            ff2_b: zeros(store, "ff2_b", dim),
            ln2_gamma: ones(store, "ln2_gamma", dim),
            ln2_beta: zeros(store, "ln2_beta", dim),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.wq,
            self.bq,
            self.wk,
            self.bk,
            self.wv,
            self.bv,
            self.wo,
            self.bo,
            self.ln1_gamma,
            self.ln1_beta,
            self.ff1_w,
            self.ff1_b,
            self.ff2_w,
            self.ff2_b,
            self.ln2_gamma,
            self.ln2_beta,
        ]
    }
}

/// Output of one block, with the attention weights exposed for inspection.
pub struct AttentionBlockOut {
    pub output: NodeId,
    /// Softmaxed attention weights, `[b*h, q, k]`.
    pub attention: NodeId,
}

/// Run one encoder block over `x: [b, s, d]`. `key_mask[b*s]` marks real
/// tokens; masked positions get zero attention weight as keys.
pub fn attention_block(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    params: &AttentionBlockParams,
    heads: usize,
    key_mask: &[bool],
    ln_eps: f64,
) -> Result<AttentionBlockOut> {
    let d = tape.value(x).last_dim();
    if heads == 0 || d % heads != 0 {
        return Err(CoreError::Config(format!(
            "hidden dim {d} not divisible by {heads} attention heads"
        )));
    }
    let head_dim = d / heads;

    let p = |tape: &mut Tape, id| tape.param(store, id);

    let (wq, bq) = (p(tape, params.wq), p(tape, params.bq));
    let (wk, bk) = (p(tape, params.wk), p(tape, params.bk));
    let (wv, bv) = (p(tape, params.wv), p(tape, params.bv));
    let q = tape.linear(x, wq, bq)?;
    let k = tape.linear(x, wk, bk)?;
    let v = tape.linear(x, wv, bv)?;

    let qh = tape.split_heads(q, heads)?;
    let kh = tape.split_heads(k, heads)?;
    let vh = tape.split_heads(v, heads)?;

    let scores = tape.batch_matmul(qh, kh, true)?;
    let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
    let masked = tape.key_padding_mask(scaled, key_mask, heads)?;
    let attention = tape.softmax_last(masked);

    let context = tape.batch_matmul(attention, vh, false)?;
    let merged = tape.merge_heads(context, heads)?;
    let (wo, bo) = (p(tape, params.wo), p(tape, params.bo));
    let projected = tape.linear(merged, wo, bo)?;

    let res1 = tape.add(x, projected)?;
    let (g1, b1) = (p(tape, params.ln1_gamma), p(tape, params.ln1_beta));
    let norm1 = tape.layer_norm(res1, g1, b1, ln_eps)?;

    let (f1w, f1b) = (p(tape, params.ff1_w), p(tape, params.ff1_b));
    let (f2w, f2b) = (p(tape, params.ff2_w), p(tape, params.ff2_b));
    let ff_hidden = tape.linear(norm1, f1w, f1b)?;
    let ff_act = tape.relu(ff_hidden);
    let ff_out = tape.linear(ff_act, f2w, f2b)?;

    let res2 = tape.add(norm1, ff_out)?;
    let (g2, b2) = (p(tape, params.ln2_gamma), p(tape, params.ln2_beta));
    let output = tape.layer_norm(res2, g2, b2, ln_eps)?;

    Ok(AttentionBlockOut { output, attention })
}

/// Sinusoidal position encodings, `[max_len, dim]`.
pub fn sinusoidal_positions(max_len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(max_len * dim);
    for pos in 0..max_len {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![max_len, dim], data).expect("consistent shape")
}
