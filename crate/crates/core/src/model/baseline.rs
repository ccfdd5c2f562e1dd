//! Plain attention encoder-decoder over a model's core layers, ignoring any
//! auxiliary predictors. Used as the reference the ablated model must match.

use crate::autodiff::{Tape, Var};
use crate::data::TrainingBatch;
use crate::error::Result;

use super::fpb::{EncoderState, FpbModel, Noise};
use super::losses::loss_nll;

/// `(logits, hidden, cell)`
pub fn plain_step(
    model: &FpbModel,
    tape: &mut Tape,
    prev: &[usize],
    hidden: Var,
    cell: Var,
    enc: &EncoderState,
    noise: &mut Noise,
) -> Result<(Var, Var, Var)> {
    let l = model.layers();
    let p = &model.params;
    let rate = model.config.dropout_rate;
    let x = l.tgt_emb.embed(tape, p, prev)?;
    let x = noise.apply(tape, x, rate)?;
    let (ctx, _) =
        l.src_attention
            .attend(tape, p, hidden, enc.annotations, enc.src_keys, enc.src_bias)?;
    let input = tape.concat(&[x, ctx])?;
    let (h, c) = l.decoder.step(tape, p, input, hidden, cell)?;
    let hd = noise.apply(tape, h, rate)?;
    let feat = tape.concat(&[hd, ctx])?;
    let logits = l.out.forward(tape, p, feat)?;
    Ok((logits, h, c))
}

/// Teacher-forced logits for every step and the NLL loss.
pub fn plain_forward(
    model: &FpbModel,
    tape: &mut Tape,
    batch: &TrainingBatch,
    noise: &mut Noise,
) -> Result<(Vec<Var>, Var)> {
    let enc = model.encode(tape, &batch.src, Some(&batch.src_mask), noise)?;
    let init = model.initial_state(tape, &enc);
    let (mut h, mut c) = (init.hidden, init.cell);
    let mut logits = Vec::with_capacity(batch.tgt_steps());
    for t in 0..batch.tgt_steps() {
        let prev = TrainingBatch::column(&batch.tgt_in, t);
        let (lg, nh, nc) = plain_step(model, tape, &prev, h, c, &enc, noise)?;
        logits.push(lg);
        h = nh;
        c = nc;
    }
    let nll = loss_nll(tape, &logits, &batch.tgt_out, &batch.tgt_mask)?;
    Ok((logits, nll))
}
