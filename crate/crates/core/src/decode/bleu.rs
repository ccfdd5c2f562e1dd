use std::collections::HashMap;

use crate::error::{FpbError, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus-level n-gram statistics behind a BLEU score.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    /// Clipped matches per order, 1..=4.
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-gram totals per order.
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

impl BleuStats {
    pub fn collect<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<Self> {
        if hyps.len() != refs.len() {
            return Err(FpbError::contract(format!(
                "{} hypotheses for {} references",
                hyps.len(),
                refs.len()
            )));
        }
        if refs.is_empty() {
            return Err(FpbError::contract("BLEU needs at least one reference"));
        }
        let mut s = BleuStats {
            matches: [0; MAX_ORDER],
            totals: [0; MAX_ORDER],
            hyp_len: 0,
            ref_len: 0,
        };
        for (h, r) in hyps.iter().zip(refs) {
            s.hyp_len += h.len();
            s.ref_len += r.len();
            for n in 1..=MAX_ORDER {
                let hc = ngram_counts(h, n);
                let rc = ngram_counts(r, n);
                s.totals[n - 1] += h.len().saturating_sub(n - 1);
                s.matches[n - 1] += hc
                    .iter()
                    .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                    .sum::<usize>();
            }
        }
        Ok(s)
    }

    /// Clipped precision for order `n` (1-based).
    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU-4 with uniform weights.
    ///
    /// Orders above 1 for which the hypotheses contain no n-grams at all are
    /// left out of the geometric mean, so identical corpora of short sentences
    /// still score 1. Otherwise a zero precision makes the score 0 unless
    /// `smooth` adds one to the numerator and denominator of orders above 1.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.totals[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut used = 0;
        for n in 1..=MAX_ORDER {
            let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
            if t == 0 {
                continue;
            }
            let p = if smooth && n > 1 {
                (m + 1) as f64 / (t + 1) as f64
            } else {
                m as f64 / t as f64
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
            used += 1;
        }
        self.brevity_penalty() * (log_sum / used as f64).exp()
    }
}

/// Case-sensitive corpus BLEU-4 without smoothing, in `[0, 1]`.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs)?.score(false))
}
