//! Teacher-forced diagnostics of the auxiliary predictors.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::data::TrainingBatch;
use crate::error::{FpbError, Result};
use crate::model::{FpbModel, Noise};
use crate::rng;

/// Something that yields one `[B, V]` bag-of-words distribution per target step.
pub trait BowSource {
    fn bow_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>>;
}

/// Something that yields one `[B, k_len]` length distribution per target step.
pub trait LengthSource {
    fn length_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>>;
}

pub struct ModelPredictor<'a>(pub &'a FpbModel);

/// Returns the supervision targets themselves.
pub struct OraclePredictor {
    pub k_len: usize,
}

/// Uniform over the whole vocabulary (or all buckets).
pub struct UniformPredictor {
    pub k_len: usize,
}

impl BowSource for ModelPredictor<'_> {
    fn bow_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        if !self.0.uses_bow() {
            return Err(FpbError::contract(
                "model was built without the BOW predictor",
            ));
        }
        let mut tape = Tape::new();
        let pass = self.0.forward_batch(&mut tape, batch, &mut Noise::eval())?;
        Ok(pass
            .bow
            .iter()
            .map(|b| tape.value(b.averaged).clone())
            .collect())
    }
}

impl LengthSource for ModelPredictor<'_> {
    fn length_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        if !self.0.uses_len() {
            return Err(FpbError::contract(
                "model was built without the length predictor",
            ));
        }
        let mut tape = Tape::new();
        let pass = self.0.forward_batch(&mut tape, batch, &mut Noise::eval())?;
        Ok(pass
            .length
            .iter()
            .map(|l| tape.value(l.probs).clone())
            .collect())
    }
}

fn per_step(
    batch: &TrainingBatch,
    width: usize,
    mut row: impl FnMut(usize, usize, &mut [f64]),
) -> Result<Vec<Tensor>> {
    (0..batch.tgt_steps())
        .map(|t| {
            let mut data = vec![0.0; batch.size() * width];
            for b in 0..batch.size() {
                row(b, t, &mut data[b * width..(b + 1) * width]);
            }
            Tensor::new(vec![batch.size(), width], data)
        })
        .collect()
}

impl BowSource for OraclePredictor {
    fn bow_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        per_step(batch, batch.vocab_tgt, |b, t, out| {
            for &(w, p) in &batch.bow_targets[b][t].entries {
                out[w] = p;
            }
        })
    }
}

impl LengthSource for OraclePredictor {
    fn length_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        let k = self.k_len;
        per_step(batch, k, |b, t, out| {
            out[batch.len_targets[b][t].min(k - 1)] = 1.0
        })
    }
}

impl BowSource for UniformPredictor {
    fn bow_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        let v = batch.vocab_tgt;
        per_step(batch, v, |_, _, out| out.fill(1.0 / v as f64))
    }
}

impl LengthSource for UniformPredictor {
    fn length_distributions(&mut self, batch: &TrainingBatch) -> Result<Vec<Tensor>> {
        let k = self.k_len;
        per_step(batch, k, |_, _, out| out.fill(1.0 / k as f64))
    }
}

/// Indices of the `m` largest entries; ties are broken uniformly at random.
fn top_m(p: &[f64], m: usize, rng: &mut rng::SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.shuffle(rng);
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(m);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BowBin {
    /// Number of remaining target tokens.
    pub remaining: usize,
    /// Mean overlap accuracy; `None` for an empty bin.
    pub accuracy: Option<f64>,
    pub count: usize,
    /// Standard error of the mean; `None` with fewer than two samples.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BowAccuracyCurve {
    pub bins: Vec<BowBin>,
}

impl BowAccuracyCurve {
    pub fn populated(&self) -> impl Iterator<Item = &BowBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("remaining,accuracy,count\n");
        for b in &self.bins {
            let acc = b.accuracy.map(|a| format!("{a}")).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", b.remaining, acc, b.count));
        }
        s
    }

    /// Spearman correlation between bin position and accuracy over populated bins.
    pub fn spearman(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .populated()
            .map(|b| (b.remaining as f64, b.accuracy.unwrap()))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        spearman(&xs, &ys)
    }
}

/// Top-m overlap accuracy by remaining length.
///
/// At every unmasked step with `r >= 1` remaining tokens, the `m` most probable
/// words (`m` = number of distinct remaining words) are compared with the
/// remaining word set, scoring `|top-m ∩ remaining| / m`. Bins cover
/// `r = 1..=max_remaining`; longer remainders are ignored.
pub fn bow_accuracy_curve(
    source: &mut dyn BowSource,
    batches: &[TrainingBatch],
    max_remaining: usize,
    seed: u64,
) -> Result<BowAccuracyCurve> {
    let mut r = rng::stream(seed, "bow_accuracy");
    let mut sum = vec![0.0; max_remaining + 1];
    let mut sq = vec![0.0; max_remaining + 1];
    let mut count = vec![0usize; max_remaining + 1];
    for batch in batches {
        let dists = source.bow_distributions(batch)?;
        for (t, dist) in dists.iter().enumerate() {
            for b in 0..batch.size() {
                let target = &batch.bow_targets[b][t];
                if !batch.tgt_mask[b][t] || target.is_skip() || target.m > max_remaining {
                    continue;
                }
                let m = target.distinct();
                let top = top_m(dist.row_slice(b), m, &mut r);
                let hits = top
                    .iter()
                    .filter(|w| target.entries.binary_search_by_key(w, |e| &e.0).is_ok())
                    .count();
                let acc = hits as f64 / m as f64;
                sum[target.m] += acc;
                sq[target.m] += acc * acc;
                count[target.m] += 1;
            }
        }
    }
    let bins = (1..=max_remaining)
        .map(|rem| {
            let n = count[rem];
            let mean = (n > 0).then(|| sum[rem] / n as f64);
            let std_error = (n > 1).then(|| {
                let mu = sum[rem] / n as f64;
                let var = ((sq[rem] - n as f64 * mu * mu) / (n - 1) as f64).max(0.0);
                (var / n as f64).sqrt()
            });
            BowBin {
                remaining: rem,
                accuracy: mean,
                count: n,
                std_error,
            }
        })
        .collect();
    Ok(BowAccuracyCurve { bins })
}

/// Fraction of unmasked steps whose most probable bucket is the true one.
/// Ties are broken at random.
pub fn length_accuracy(
    source: &mut dyn LengthSource,
    batches: &[TrainingBatch],
    seed: u64,
) -> Result<f64> {
    let mut r = rng::stream(seed, "length_accuracy");
    let (mut hit, mut total) = (0usize, 0usize);
    for batch in batches {
        let dists = source.length_distributions(batch)?;
        for (t, dist) in dists.iter().enumerate() {
            for b in 0..batch.size() {
                if !batch.tgt_mask[b][t] {
                    continue;
                }
                let best = top_m(dist.row_slice(b), 1, &mut r)[0];
                hit += usize::from(best == batch.len_targets[b][t]);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(FpbError::contract("length_accuracy saw no target steps"));
    }
    Ok(hit as f64 / total as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut dx, mut dy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx).powi(2);
        dy += (b - my).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}
