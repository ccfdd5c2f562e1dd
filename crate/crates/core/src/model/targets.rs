use crate::data::{EOS, PAD};

/// Bag-of-words supervision for one decoder step: mass `count(w) / m` on each
/// remaining word `w`, where `m` counts remaining tokens (EOS and PAD excluded).
/// `m == 0` yields an empty target that the loss skips.
#[derive(Debug, Clone, PartialEq)]
pub struct BowTarget {
    /// `(word id, mass)`, ascending by id.
    pub entries: Vec<(usize, f64)>,
    /// Per-word token counts, parallel to `entries`.
    pub counts: Vec<usize>,
    pub m: usize,
}

impl BowTarget {
    pub fn is_skip(&self) -> bool {
        self.m == 0
    }

    pub fn dense(&self, vocab: usize) -> Vec<f64> {
        let mut out = vec![0.0; vocab];
        for &(w, p) in &self.entries {
            out[w] = p;
        }
        out
    }

    /// Number of distinct remaining words.
    pub fn distinct(&self) -> usize {
        self.entries.len()
    }
}

pub fn bow_target(remaining: &[usize], vocab_tgt: usize) -> BowTarget {
    let mut counts = vec![0usize; vocab_tgt];
    let mut m = 0;
    for &w in remaining {
        if w == EOS || w == PAD || w >= vocab_tgt {
            continue;
        }
        counts[w] += 1;
        m += 1;
    }
    let mut entries = Vec::new();
    let mut per_word = Vec::new();
    if m > 0 {
        for (w, &c) in counts.iter().enumerate() {
            if c > 0 {
                entries.push((w, c as f64 / m as f64));
                per_word.push(c);
            }
        }
    }
    BowTarget {
        entries,
        counts: per_word,
        m,
    }
}

/// Remaining-length bucket: `min(r, k_len - 1)`.
pub fn length_target(remaining: usize, k_len: usize) -> usize {
    remaining.min(k_len.saturating_sub(1))
}
