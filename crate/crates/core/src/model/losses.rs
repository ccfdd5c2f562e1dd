//! Training objectives. Every loss takes per-step tensors `[B, *]` plus
//! `B x T` targets and masks, and returns a scalar `[1]`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{FpbError, Result};

use super::targets::BowTarget;

fn check_steps(
    op: &'static str,
    steps: usize,
    targets: usize,
    mask: &[Vec<bool>],
) -> Result<usize> {
    let batch = mask.len();
    if batch == 0 || mask.iter().any(|r| r.len() < steps) || targets != batch {
        return Err(FpbError::dim(
            op,
            format!("{steps} steps, {targets} target rows, mask {batch} rows"),
        ));
    }
    Ok(batch)
}

/// Mean negative log-likelihood of the picked class per row, averaged over each
/// row's unmasked steps and then over rows that have any.
fn picked_nll(
    op: &'static str,
    tape: &mut Tape,
    logits: &[Var],
    classes: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<Var> {
    let batch = check_steps(op, logits.len(), classes.len(), mask)?;
    let counts: Vec<usize> = mask
        .iter()
        .map(|r| r[..logits.len()].iter().filter(|&&m| m).count())
        .collect();
    let rows = counts.iter().filter(|&&c| c > 0).count();
    if rows == 0 {
        return Err(FpbError::contract(format!("{op}: mask selects no tokens")));
    }
    let mut total: Option<Var> = None;
    for (t, &lg) in logits.iter().enumerate() {
        let col: Vec<usize> = classes.iter().map(|r| r[t]).collect();
        let w: Vec<f64> = (0..batch)
            .map(|b| {
                if mask[b][t] {
                    -1.0 / (counts[b] as f64 * rows as f64)
                } else {
                    0.0
                }
            })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let width = *tape.shape(lg).last().unwrap();
        if let Some(&c) = col
            .iter()
            .zip(&w)
            .find(|(&c, &w)| w != 0.0 && c >= width)
            .map(|p| p.0)
        {
            return Err(FpbError::Index { id: c, size: width });
        }
        // masked rows may carry PAD or out-of-range filler
        let col: Vec<usize> = col.iter().map(|&c| c.min(width - 1)).collect();
        let ls = tape.log_softmax(lg);
        let picked = tape.pick(ls, &col)?;
        let wv = tape.constant(Tensor::new(vec![batch, 1], w)?);
        let term = tape.mul(picked, wv)?;
        let s = tape.sum(term);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one active step"))
}

/// Token-level cross-entropy of the translation.
pub fn loss_nll(
    tape: &mut Tape,
    logits: &[Var],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<Var> {
    picked_nll("loss_nll", tape, logits, targets, mask)
}

/// Cross-entropy between the remaining-length buckets and the length predictor.
pub fn loss_len(
    tape: &mut Tape,
    logits: &[Var],
    buckets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<Var> {
    picked_nll("loss_len", tape, logits, buckets, mask)
}

/// `-sum q log p` over the BOW-active steps of each row, averaged over those
/// steps and then over the batch. Rows with no active step contribute zero.
pub fn loss_bow(
    tape: &mut Tape,
    probs: &[Var],
    targets: &[Vec<BowTarget>],
    mask: &[Vec<bool>],
) -> Result<Var> {
    let batch = check_steps("loss_bow", probs.len(), targets.len(), mask)?;
    let active = |b: usize, t: usize| mask[b][t] && !targets[b][t].is_skip();
    let counts: Vec<usize> = (0..batch)
        .map(|b| (0..probs.len()).filter(|&t| active(b, t)).count())
        .collect();
    let mut total: Option<Var> = None;
    for (t, &p) in probs.iter().enumerate() {
        if !(0..batch).any(|b| active(b, t)) {
            continue;
        }
        let v = *tape.shape(p).last().unwrap();
        let mut q = vec![0.0; batch * v];
        for b in 0..batch {
            if !active(b, t) {
                continue;
            }
            let scale = -1.0 / (counts[b] as f64 * batch as f64);
            for &(w, mass) in &targets[b][t].entries {
                if w >= v {
                    return Err(FpbError::Index { id: w, size: v });
                }
                q[b * v + w] = mass * scale;
            }
        }
        let lp = tape.log(p)?;
        let qv = tape.constant(Tensor::new(vec![batch, v], q)?);
        let term = tape.mul(lp, qv)?;
        let s = tape.sum(term);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

/// `lambda1 L_nll + lambda2 L_bow + lambda3 L_len`, leaving out disabled terms.
pub fn loss_total(
    tape: &mut Tape,
    nll: Var,
    bow: Option<Var>,
    len: Option<Var>,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> Result<Var> {
    let mut total = if lambda1 == 1.0 {
        nll
    } else {
        tape.scale(nll, lambda1)
    };
    for (term, lambda) in [(bow, lambda2), (len, lambda3)] {
        if let Some(v) = term {
            if lambda != 0.0 {
                let s = tape.scale(v, lambda);
                total = tape.add(total, s)?;
            }
        }
    }
    Ok(total)
}

/// Scalar form of [`loss_total`].
pub fn combine(nll: f64, bow: Option<f64>, len: Option<f64>, lambdas: (f64, f64, f64)) -> f64 {
    lambdas.0 * nll + bow.map_or(0.0, |b| lambdas.1 * b) + len.map_or(0.0, |l| lambdas.2 * l)
}
