use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::TrainingBatch;
use crate::error::{FpbError, Result};
use crate::layers::{dropout, mask_bias, AdditiveAttention, BiLstm, Embedding, Linear, LstmCell};
use crate::rng::{self, SeededRng};

use super::config::{BowMemory, FpbConfig};
use super::losses::{loss_bow, loss_len, loss_nll, loss_total};

/// Dropout switch and its random stream.
pub struct Noise {
    training: bool,
    rng: SeededRng,
}

impl Noise {
    pub fn eval() -> Self {
        Noise {
            training: false,
            rng: rng::stream(0, "unused"),
        }
    }

    pub fn train(rng: SeededRng) -> Self {
        Noise {
            training: true,
            rng,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        dropout(tape, x, rate, self.training, &mut self.rng)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BowLayers {
    pub heads: Vec<Linear>,
    pub attention: AdditiveAttention,
    pub memory_proj: Option<Linear>,
    pub vocab_proj: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct LengthLayers {
    pub attention: AdditiveAttention,
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct Layers {
    pub src_emb: Embedding,
    pub tgt_emb: Embedding,
    pub encoder: BiLstm,
    pub init: Linear,
    pub src_attention: AdditiveAttention,
    pub decoder: LstmCell,
    pub out: Linear,
    pub bow: Option<BowLayers>,
    pub len: Option<LengthLayers>,
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct EncoderState {
    /// `[B, n, 2 d_hidden]`
    pub annotations: Var,
    pub src_keys: Var,
    pub src_bias: Option<Var>,
    /// Decoder initial hidden state, `[B, d_hidden]`.
    pub final_summary: Var,
    pub bow_keys: Option<Var>,
    pub batch: usize,
    pub len: usize,
}

/// Per-step decoder carry.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    /// `o_{t,k}` for each BOW head; empty when the BOW predictor is off.
    pub head_outputs: Vec<Var>,
    /// Decoder hidden states `s_1..s_t`.
    pub history: Vec<Var>,
    /// Averaged BOW distribution from the previous step.
    pub prev_bow: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct BowPrediction {
    pub per_head: Vec<Var>,
    pub averaged: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LengthPrediction {
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub state: DecoderState,
    pub bow: Option<BowPrediction>,
    pub length: Option<LengthPrediction>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Var>,
    pub bow: Vec<BowPrediction>,
    pub length: Vec<LengthPrediction>,
    pub nll: Var,
    pub bow_loss: Option<Var>,
    pub len_loss: Option<Var>,
    pub total: Var,
}

/// The future-prediction encoder-decoder: parameters plus layer wiring.
#[derive(Debug, Clone)]
pub struct FpbModel {
    pub config: FpbConfig,
    pub params: ParamStore,
    pub(crate) layers: Layers,
}

impl FpbModel {
    /// Initialises parameters from the `init` stream of `seed`. Core layers are
    /// registered before the predictors, so models differing only in which
    /// predictors are enabled share their core initialisation.
    pub fn new(config: FpbConfig, seed: u64) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let mut r = rng::stream(seed, "init");
        let mut p = ParamStore::new();
        let c = &config;
        let (e, h, a, range) = (c.d_emb, c.d_hidden, c.d_attn, c.init_range);
        let src_emb = Embedding::new(&mut p, "src_emb", c.vocab_src, e, range, &mut r);
        let tgt_emb = Embedding::new(&mut p, "tgt_emb", c.vocab_tgt, e, range, &mut r);
        let encoder = BiLstm {
            forward: LstmCell::new(&mut p, "enc.fwd", e, h, range, &mut r),
            backward: LstmCell::new(&mut p, "enc.bwd", e, h, range, &mut r),
        };
        let init = Linear::new(&mut p, "dec.init", 2 * h, h, true, range, &mut r);
        let src_attention = AdditiveAttention::new(&mut p, "dec.attn", h, 2 * h, a, range, &mut r);
        let decoder = LstmCell::new(&mut p, "dec.lstm", e + 2 * h, h, range, &mut r);
        let out = Linear::new(&mut p, "dec.out", 3 * h, c.vocab_tgt, true, range, &mut r);
        let bow = c.use_bow.then(|| {
            let heads = (0..c.k_heads)
                .map(|k| Linear::new(&mut p, &format!("bow.f{k}"), 2 * h, h, true, range, &mut r))
                .collect();
            let (d_mem, memory_proj) = match c.bow_memory {
                BowMemory::History => (h, None),
                BowMemory::Encoder => (
                    2 * h,
                    Some(Linear::new(
                        &mut p,
                        "bow.mem_proj",
                        2 * h,
                        h,
                        false,
                        range,
                        &mut r,
                    )),
                ),
            };
            BowLayers {
                heads,
                attention: AdditiveAttention::new(&mut p, "bow.attn", h, d_mem, a, range, &mut r),
                memory_proj,
                vocab_proj: Linear::new(&mut p, "bow.w", h, c.vocab_tgt, false, range, &mut r),
            }
        });
        let len = c.use_len.then(|| LengthLayers {
            attention: AdditiveAttention::new(&mut p, "len.attn", h, h, a, range, &mut r),
            hidden: Linear::new(&mut p, "len.hidden", 2 * h, h, true, range, &mut r),
            out: Linear::new(&mut p, "len.out", h, c.k_len, true, range, &mut r),
        });
        Ok(FpbModel {
            config,
            params: p,
            layers: Layers {
                src_emb,
                tgt_emb,
                encoder,
                init,
                src_attention,
                decoder,
                out,
                bow,
                len,
            },
        })
    }

    fn check_ids(ids: &[usize], size: usize) -> Result<()> {
        match ids.iter().find(|&&i| i >= size) {
            Some(&id) => Err(FpbError::Index { id, size }),
            None => Ok(()),
        }
    }

    /// Encodes a padded source batch `[B][n]`; `mask` marks real tokens.
    pub fn encode(
        &self,
        tape: &mut Tape,
        src: &[Vec<usize>],
        mask: Option<&[Vec<bool>]>,
        noise: &mut Noise,
    ) -> Result<EncoderState> {
        let n = src.first().map(|r| r.len()).unwrap_or(0);
        if n == 0 {
            return Err(FpbError::contract("encode needs a nonempty source"));
        }
        if src.iter().any(|r| r.len() != n) {
            return Err(FpbError::dim("encode", "ragged source batch"));
        }
        for row in src {
            Self::check_ids(row, self.config.vocab_src)?;
        }
        let p = &self.params;
        let l = &self.layers;
        let mut inputs = Vec::with_capacity(n);
        for j in 0..n {
            let col = TrainingBatch::column(src, j);
            let e = l.src_emb.embed(tape, p, &col)?;
            inputs.push(noise.apply(tape, e, self.config.dropout_rate)?);
        }
        let out = l.encoder.encode(tape, p, &inputs, mask)?;
        let finals = tape.concat(&[out.final_forward, out.final_backward])?;
        let init = l.init.forward(tape, p, finals)?;
        let final_summary = tape.tanh(init);
        let src_keys = l.src_attention.keys(tape, p, out.annotations)?;
        let src_bias = mask.map(|m| mask_bias(tape, m)).transpose()?;
        let bow_keys = match &l.bow {
            Some(b) if self.config.bow_memory == BowMemory::Encoder => {
                Some(b.attention.keys(tape, p, out.annotations)?)
            }
            _ => None,
        };
        Ok(EncoderState {
            annotations: out.annotations,
            src_keys,
            src_bias,
            final_summary,
            bow_keys,
            batch: src.len(),
            len: n,
        })
    }

    /// Single-sentence convenience wrapper around [`encode`](Self::encode).
    pub fn encode_ids(
        &self,
        tape: &mut Tape,
        src: &[usize],
        noise: &mut Noise,
    ) -> Result<EncoderState> {
        self.encode(tape, &[src.to_vec()], None, noise)
    }

    pub fn initial_state(&self, tape: &mut Tape, enc: &EncoderState) -> DecoderState {
        let h = self.config.d_hidden;
        let zero = tape.constant(Tensor::zeros(&[enc.batch, h]));
        let heads = if self.layers.bow.is_some() {
            vec![zero; self.config.k_heads]
        } else {
            Vec::new()
        };
        DecoderState {
            hidden: enc.final_summary,
            cell: zero,
            head_outputs: heads,
            history: Vec::new(),
            prev_bow: None,
        }
    }

    /// `e_bow = sum_i p(i) e_i` over the target vocabulary; zero when there is
    /// no previous prediction. Unless `feedback_backprop` is set, `p` is
    /// treated as a constant.
    pub fn bow_feedback(&self, tape: &mut Tape, prev: Option<Var>, batch: usize) -> Result<Var> {
        match prev {
            None => Ok(tape.constant(Tensor::zeros(&[batch, self.config.d_emb]))),
            Some(p) => self.feedback_from(tape, p),
        }
    }

    fn feedback_from(&self, tape: &mut Tape, p: Var) -> Result<Var> {
        let v = *tape.shape(p).last().unwrap();
        if v != self.config.vocab_tgt {
            return Err(FpbError::dim(
                "bow_feedback",
                format!(
                    "distribution over {v} words, table has {}",
                    self.config.vocab_tgt
                ),
            ));
        }
        let p = if self.config.feedback_backprop {
            p
        } else {
            tape.detach(p)
        };
        let table = tape.param(&self.params, self.layers.tgt_emb.table);
        tape.matmul(p, table)
    }

    /// One decoder step for a batch of previous tokens.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        prev: &[usize],
        state: &DecoderState,
        enc: &EncoderState,
        noise: &mut Noise,
    ) -> Result<StepOutput> {
        if prev.len() != enc.batch || tape.shape(state.hidden) != [enc.batch, self.config.d_hidden]
        {
            return Err(FpbError::dim(
                "decode_step",
                format!(
                    "{} tokens, hidden {:?}, encoder batch {}",
                    prev.len(),
                    tape.shape(state.hidden),
                    enc.batch
                ),
            ));
        }
        Self::check_ids(prev, self.config.vocab_tgt)?;
        let p = &self.params;
        let l = &self.layers;
        let rate = self.config.dropout_rate;

        let mut x = l.tgt_emb.embed(tape, p, prev)?;
        if let (Some(_), Some(prev_bow)) = (&l.bow, state.prev_bow) {
            let e_bow = self.feedback_from(tape, prev_bow)?;
            x = tape.add(x, e_bow)?;
        }
        let x = noise.apply(tape, x, rate)?;
        let (ctx, _) = l.src_attention.attend(
            tape,
            p,
            state.hidden,
            enc.annotations,
            enc.src_keys,
            enc.src_bias,
        )?;
        let input = tape.concat(&[x, ctx])?;
        let (hidden, cell) = l.decoder.step(tape, p, input, state.hidden, state.cell)?;
        let s_drop = noise.apply(tape, hidden, rate)?;
        let feat = tape.concat(&[s_drop, ctx])?;
        let logits = l.out.forward(tape, p, feat)?;

        let mut history = state.history.clone();
        history.push(hidden);
        let mut next = DecoderState {
            hidden,
            cell,
            head_outputs: Vec::new(),
            history,
            prev_bow: None,
        };
        let needs_stack =
            l.len.is_some() || (l.bow.is_some() && self.config.bow_memory == BowMemory::History);
        let stacked = if needs_stack {
            Some(tape.stack(&next.history)?)
        } else {
            None
        };
        let bow = match &l.bow {
            Some(_) => {
                let (pred, heads) =
                    self.bow_predict_stacked(tape, cell, &state.head_outputs, stacked, enc)?;
                next.head_outputs = heads;
                next.prev_bow = Some(pred.averaged);
                Some(pred)
            }
            None => None,
        };
        let length = match stacked {
            Some(mem) if l.len.is_some() => Some(self.length_predict_stacked(tape, hidden, mem)?),
            _ => None,
        };
        Ok(StepOutput {
            logits,
            state: next,
            bow,
            length,
        })
    }

    /// Gated multi-head bag-of-words prediction from the decoder cell state.
    ///
    /// Returns the prediction and the new head outputs `o_{t,k}`.
    pub fn bow_predict(
        &self,
        tape: &mut Tape,
        cell: Var,
        head_outputs_prev: &[Var],
        history: &[Var],
        enc: &EncoderState,
    ) -> Result<(BowPrediction, Vec<Var>)> {
        if history.is_empty() {
            return Err(FpbError::contract("bow_predict needs a nonempty history"));
        }
        let stacked = match self.config.bow_memory {
            BowMemory::History => Some(tape.stack(history)?),
            BowMemory::Encoder => None,
        };
        self.bow_predict_stacked(tape, cell, head_outputs_prev, stacked, enc)
    }

    fn bow_predict_stacked(
        &self,
        tape: &mut Tape,
        cell: Var,
        head_outputs_prev: &[Var],
        history: Option<Var>,
        enc: &EncoderState,
    ) -> Result<(BowPrediction, Vec<Var>)> {
        let b = self
            .layers
            .bow
            .as_ref()
            .ok_or_else(|| FpbError::contract("BOW predictor is disabled"))?;
        if head_outputs_prev.len() != b.heads.len() {
            return Err(FpbError::dim(
                "bow_predict",
                format!(
                    "{} head outputs for {} heads",
                    head_outputs_prev.len(),
                    b.heads.len()
                ),
            ));
        }
        let p = &self.params;
        let (memory, keys) = match (self.config.bow_memory, history) {
            (BowMemory::History, Some(h)) => (h, b.attention.keys(tape, p, h)?),
            (BowMemory::Encoder, _) => (
                enc.annotations,
                enc.bow_keys
                    .ok_or_else(|| FpbError::contract("encoder BOW keys missing"))?,
            ),
            (BowMemory::History, None) => {
                return Err(FpbError::contract("bow_predict needs a nonempty history"))
            }
        };
        let bias = match self.config.bow_memory {
            BowMemory::Encoder => enc.src_bias,
            BowMemory::History => None,
        };
        let tc = tape.tanh(cell);
        let mut per_head = Vec::with_capacity(b.heads.len());
        let mut outputs = Vec::with_capacity(b.heads.len());
        for (f, &o_prev) in b.heads.iter().zip(head_outputs_prev) {
            let inp = tape.concat(&[cell, o_prev])?;
            let pre = f.forward(tape, p, inp)?;
            let g = tape.sigmoid(pre);
            let a = tape.mul(g, tc)?;
            let ng = tape.one_minus(g);
            let carry = tape.mul(ng, o_prev)?;
            let z = tape.add(a, carry)?;
            let (mut o, _) = b.attention.attend(tape, p, z, memory, keys, bias)?;
            if let Some(proj) = &b.memory_proj {
                o = proj.forward(tape, p, o)?;
            }
            let logits = b.vocab_proj.forward(tape, p, o)?;
            per_head.push(tape.softmax(logits));
            outputs.push(o);
        }
        let averaged = if per_head.len() == 1 {
            per_head[0]
        } else {
            let mut acc = per_head[0];
            for &ph in &per_head[1..] {
                acc = tape.add(acc, ph)?;
            }
            tape.scale(acc, 1.0 / per_head.len() as f64)
        };
        Ok((BowPrediction { per_head, averaged }, outputs))
    }

    /// Remaining-length distribution from `[s_t; attention(s_t, history)]`.
    pub fn length_predict(
        &self,
        tape: &mut Tape,
        hidden: Var,
        history: &[Var],
    ) -> Result<LengthPrediction> {
        if history.is_empty() {
            return Err(FpbError::contract(
                "length_predict needs a nonempty history",
            ));
        }
        let mem = tape.stack(history)?;
        self.length_predict_stacked(tape, hidden, mem)
    }

    fn length_predict_stacked(
        &self,
        tape: &mut Tape,
        hidden: Var,
        history: Var,
    ) -> Result<LengthPrediction> {
        let l = self
            .layers
            .len
            .as_ref()
            .ok_or_else(|| FpbError::contract("length predictor is disabled"))?;
        let p = &self.params;
        let (ctx, _) = l.attention.forward(tape, p, hidden, history, None)?;
        let feat = tape.concat(&[hidden, ctx])?;
        let h = l.hidden.forward(tape, p, feat)?;
        let h = tape.tanh(h);
        let logits = l.out.forward(tape, p, h)?;
        let probs = tape.softmax(logits);
        Ok(LengthPrediction { logits, probs })
    }

    /// Teacher-forced pass over a batch, producing every loss term.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        batch: &TrainingBatch,
        noise: &mut Noise,
    ) -> Result<ForwardPass> {
        let enc = self.encode(tape, &batch.src, Some(&batch.src_mask), noise)?;
        let mut state = self.initial_state(tape, &enc);
        let steps = batch.tgt_steps();
        let mut logits = Vec::with_capacity(steps);
        let mut bows = Vec::new();
        let mut lens = Vec::new();
        for t in 0..steps {
            let prev = TrainingBatch::column(&batch.tgt_in, t);
            let out = self.decode_step(tape, &prev, &state, &enc, noise)?;
            logits.push(out.logits);
            if let Some(b) = out.bow {
                bows.push(b);
            }
            if let Some(l) = out.length {
                lens.push(l);
            }
            state = out.state;
        }
        let nll = loss_nll(tape, &logits, &batch.tgt_out, &batch.tgt_mask)?;
        let bow_loss = if self.layers.bow.is_some() {
            let probs: Vec<Var> = bows.iter().map(|b| b.averaged).collect();
            Some(loss_bow(tape, &probs, &batch.bow_targets, &batch.tgt_mask)?)
        } else {
            None
        };
        let len_loss = if self.layers.len.is_some() {
            let ls: Vec<Var> = lens.iter().map(|l| l.logits).collect();
            Some(loss_len(tape, &ls, &batch.len_targets, &batch.tgt_mask)?)
        } else {
            None
        };
        let c = &self.config;
        let total = loss_total(
            tape, nll, bow_loss, len_loss, c.lambda1, c.lambda2, c.lambda3,
        )?;
        Ok(ForwardPass {
            logits,
            bow: bows,
            length: lens,
            nll,
            bow_loss,
            len_loss,
            total,
        })
    }

    pub fn uses_bow(&self) -> bool {
        self.layers.bow.is_some()
    }

    pub fn uses_len(&self) -> bool {
        self.layers.len.is_some()
    }

    pub(crate) fn layers(&self) -> &Layers {
        &self.layers
    }
}
