//! Desk-scale translation tasks with known structure.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::ParallelCorpus;
use crate::error::{FpbError, Result};
use crate::rng;

/// Longest sentence the pipeline accepts.
pub const MAX_SENTENCE_LEN: usize = 64;

/// Probability of swapping an adjacent target pair in the lexicon task.
pub const LEXICON_SWAP_PROB: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Copy,
    Reverse,
    Lexicon,
}

impl FromStr for Task {
    type Err = FpbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "lexicon" => Ok(Task::Lexicon),
            other => Err(FpbError::config(
                "task",
                format!("unknown task {other:?} (copy, reverse, lexicon)"),
            )),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::Lexicon => "lexicon",
        })
    }
}

fn src_word(i: usize) -> String {
    format!("s{i}")
}

/// Source-to-target word bijection used by the lexicon task.
pub fn lexicon_map(seed: u64, vocab_size: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..vocab_size).collect();
    perm.shuffle(&mut rng::stream(seed, "synthetic.lexicon"));
    perm
}

/// Generates `n_pairs` pairs over `vocab_size` content words with lengths
/// drawn uniformly from `min_len..=max_len`.
///
/// Copy and reverse share one vocabulary across both sides; the lexicon task
/// maps source word `s{i}` to target word `t{perm[i]}` through a seed-fixed
/// bijection and then swaps adjacent target pairs with probability 0.2
/// (a swapped pair is not revisited).
pub fn gen_synthetic(
    task: Task,
    n_pairs: usize,
    vocab_size: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<ParallelCorpus> {
    let (lo, hi) = len_range;
    if lo < 1 || hi > MAX_SENTENCE_LEN || lo > hi {
        return Err(FpbError::config(
            "len_range",
            format!("{lo}..={hi} must lie within 1..=64"),
        ));
    }
    if vocab_size < 5 {
        return Err(FpbError::config("vocab_size", format!("{vocab_size} < 5")));
    }
    let perm = lexicon_map(seed, vocab_size);
    let mut r = rng::stream(seed, "synthetic.pairs");
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = r.gen_range(lo..=hi);
        let ids: Vec<usize> = (0..len).map(|_| r.gen_range(0..vocab_size)).collect();
        let src: Vec<String> = ids.iter().map(|&i| src_word(i)).collect();
        let tgt = match task {
            Task::Copy => src.clone(),
            Task::Reverse => src.iter().rev().cloned().collect(),
            Task::Lexicon => {
                let mut t: Vec<String> = ids.iter().map(|&i| format!("t{}", perm[i])).collect();
                let mut i = 0;
                while i + 1 < t.len() {
                    if r.gen::<f64>() < LEXICON_SWAP_PROB {
                        t.swap(i, i + 1);
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                t
            }
        };
        pairs.push((src, tgt));
    }
    ParallelCorpus::new(pairs)
}
