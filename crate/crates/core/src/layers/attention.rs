use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{FpbError, Result};

/// Additive (concat/tanh) attention: `score_j = v . tanh(q Wq + m_j Wk)`.
#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    pub query_proj: ParamId,
    pub key_proj: ParamId,
    pub score: ParamId,
    pub d_query: usize,
    pub d_memory: usize,
    pub d_attn: usize,
}

/// Large negative offset for masked scores; `exp` of it underflows to exactly 0.
const MASKED: f64 = -1e30;

/// Additive score bias for a `[B, n]` mask (`true` = attend).
pub fn mask_bias(tape: &mut Tape, mask: &[Vec<bool>]) -> Result<Var> {
    let n = mask.first().map(|r| r.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(mask.len() * n);
    for row in mask {
        if !row.iter().any(|&m| m) {
            return Err(FpbError::contract("attention memory is fully masked"));
        }
        data.extend(row.iter().map(|&m| if m { 0.0 } else { MASKED }));
    }
    Ok(tape.constant(Tensor::new(vec![mask.len(), n], data)?))
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_query: usize,
        d_memory: usize,
        d_attn: usize,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        AdditiveAttention {
            query_proj: store.add_uniform(format!("{name}.wq"), &[d_query, d_attn], range, rng),
            key_proj: store.add_uniform(format!("{name}.wk"), &[d_memory, d_attn], range, rng),
            score: store.add_uniform(format!("{name}.v"), &[d_attn, 1], range, rng),
            d_query,
            d_memory,
            d_attn,
        }
    }

    /// Projected keys `[B, n, d_attn]` for a memory `[B, n, d_memory]`.
    /// Computed once when the memory is reused across decoder steps.
    pub fn keys(&self, tape: &mut Tape, store: &ParamStore, memory: Var) -> Result<Var> {
        let s = tape.shape(memory);
        if s.len() != 3 || s[2] != self.d_memory {
            return Err(FpbError::dim(
                "attention",
                format!("memory {s:?}, expected [B, n, {}]", self.d_memory),
            ));
        }
        let wk = tape.param(store, self.key_proj);
        tape.matmul(memory, wk)
    }

    /// Returns `(context [B, d_memory], weights [B, n])`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        memory: Var,
        keys: Var,
        bias: Option<Var>,
    ) -> Result<(Var, Var)> {
        let ms = tape.shape(memory).to_vec();
        let (batch, n) = (ms[0], ms[1]);
        let qs = tape.shape(query);
        if qs != [batch, self.d_query] {
            return Err(FpbError::dim(
                "attention",
                format!("query {qs:?}, expected [{batch}, {}]", self.d_query),
            ));
        }
        let wq = tape.param(store, self.query_proj);
        let v = tape.param(store, self.score);
        let q = tape.matmul(query, wq)?;
        let q = tape.repeat_rows(q, n)?;
        let pre = tape.add(q, keys)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v)?;
        let mut scores = tape.reshape(scores, &[batch, n])?;
        if let Some(b) = bias {
            scores = tape.add(scores, b)?;
        }
        let weights = tape.softmax(scores);
        let w3 = tape.reshape(weights, &[batch, 1, n])?;
        let ctx = tape.matmul(w3, memory)?;
        let ctx = tape.reshape(ctx, &[batch, self.d_memory])?;
        Ok((ctx, weights))
    }

    /// One-shot attention over `memory` with an optional `[B, n]` mask.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        memory: Var,
        mask: Option<&[Vec<bool>]>,
    ) -> Result<(Var, Var)> {
        let keys = self.keys(tape, store, memory)?;
        let bias = mask.map(|m| mask_bias(tape, m)).transpose()?;
        self.attend(tape, store, query, memory, keys, bias)
    }
}
