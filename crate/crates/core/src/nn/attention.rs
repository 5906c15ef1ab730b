use sgdvit_tensor::flops::kind;
use sgdvit_tensor::{Element, ParamId, ParamStore, Tape, TensorError, Var};

use super::init::kaiming_uniform;
use crate::error::{CoreError, Result};
use crate::rng::Rng;

fn matrix_dims<T: Element>(t: &Tape<T>, v: Var) -> Result<(usize, usize)> {
    match *t.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => Err(TensorError::invalid("attention", format!("expected a token matrix, got shape {s:?}")).into()),
    }
}

/// Row-stochastic attention weights `softmax(Q K^T / sqrt(scale_dim))`.
pub fn attention_weights<T: Element>(t: &mut Tape<T>, q: Var, k: Var, scale_dim: usize) -> Result<Var> {
    let (_, cq) = matrix_dims(t, q)?;
    let (_, ck) = matrix_dims(t, k)?;
    if cq != ck {
        return Err(TensorError::mismatch("attention", t.shape(q), t.shape(k)).into());
    }
    let kt = t.transpose(k)?;
    let scores = t.matmul_as(q, kt, kind::ATTN_QK)?;
    let scores = t.scale(scores, 1.0 / (scale_dim as f64).sqrt());
    Ok(t.softmax(scores))
}

/// `softmax(Q K^T / sqrt(scale_dim)) V` for `Q: [nq, c]`, `K: [nkv, c]`,
/// `V: [nkv, cv]`.
pub fn scaled_dot_attention<T: Element>(t: &mut Tape<T>, q: Var, k: Var, v: Var, scale_dim: usize) -> Result<Var> {
    let (nk, _) = matrix_dims(t, k)?;
    let (nv, _) = matrix_dims(t, v)?;
    if nk != nv {
        return Err(TensorError::mismatch("attention", t.shape(k), t.shape(v)).into());
    }
    let a = attention_weights(t, q, k, scale_dim)?;
    Ok(t.matmul_as(a, v, kind::ATTN_AV)?)
}

/// Multi-head attention: per head `j`, attention over `Q W1_j`, `K W2_j`,
/// `V W3_j` (each `C x C/N`, scaled by the per-head width), heads
/// concatenated and projected by `Wc` (`C x C`). No biases.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub w1: Vec<ParamId>,
    pub w2: Vec<ParamId>,
    pub w3: Vec<ParamId>,
    pub wc: ParamId,
}

impl MultiHeadAttention {
    /// With `tie_qk`, each head starts with equal query and key projections,
    /// which makes initial attention favour keys similar to the query.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        tie_qk: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(CoreError::config(name, format!("model dim {dim} not divisible by {heads} heads")));
        }
        let cn = dim / heads;
        let (mut w1, mut w2, mut w3) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..heads {
            let q = kaiming_uniform::<T>(&[dim, cn], dim, rng)?;
            let k = if tie_qk { q.clone() } else { kaiming_uniform(&[dim, cn], dim, rng)? };
            w1.push(store.add(format!("{name}.w1.{j}"), q)?);
            w2.push(store.add(format!("{name}.w2.{j}"), k)?);
            w3.push(store.add(format!("{name}.w3.{j}"), kaiming_uniform(&[dim, cn], dim, rng)?)?);
        }
        let wc = store.add(format!("{name}.wc"), kaiming_uniform(&[dim, dim], dim, rng)?)?;
        Ok(MultiHeadAttention { dim, heads, w1, w2, w3, wc })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, q: Var, k: Var, v: Var) -> Result<Var> {
        for x in [q, k, v] {
            let (_, c) = matrix_dims(t, x)?;
            if c != self.dim {
                return Err(TensorError::mismatch("multi_head_attention", t.shape(x), &[self.dim]).into());
            }
        }
        let mut outs = Vec::with_capacity(self.heads);
        for j in 0..self.heads {
            let (w1, w2, w3) = (t.param(store, self.w1[j]), t.param(store, self.w2[j]), t.param(store, self.w3[j]));
            let qj = t.matmul(q, w1)?;
            let kj = t.matmul(k, w2)?;
            let vj = t.matmul(v, w3)?;
            outs.push(scaled_dot_attention(t, qj, kj, vj, self.head_dim())?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat(&outs, 1)? };
        let wc = t.param(store, self.wc);
        Ok(t.matmul(cat, wc)?)
    }
}
