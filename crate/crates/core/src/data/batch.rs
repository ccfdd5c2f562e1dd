use rand::seq::SliceRandom;

use super::corpus::ParallelCorpus;
use super::synthetic::MAX_SENTENCE_LEN;
use super::vocab::{Vocab, BOS, EOS, PAD};
use crate::error::{FpbError, Result};
use crate::model::{bow_target, length_target, BowTarget};
use crate::rng;

/// Padded teacher-forcing batch with per-step auxiliary supervision.
///
/// Target step `t` feeds `tgt_in[b][t]` and predicts `tgt_out[b][t]`; the
/// BOW target covers the reference tokens after that prediction and the length
/// target is how many of them remain (EOS excluded), clamped to `k_len - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub src: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<bool>>,
    pub bow_targets: Vec<Vec<BowTarget>>,
    pub len_targets: Vec<Vec<usize>>,
    pub vocab_tgt: usize,
}

impl TrainingBatch {
    /// Builds one batch from id sequences (no BOS/EOS on either side).
    pub fn from_ids(
        pairs: &[(Vec<usize>, Vec<usize>)],
        vocab_tgt: usize,
        k_len: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(FpbError::contract("empty batch"));
        }
        if let Some(i) = pairs.iter().position(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(FpbError::contract(format!("pair {i} has an empty side")));
        }
        let s_max = pairs.iter().map(|p| p.0.len()).max().unwrap();
        let t_max = pairs.iter().map(|p| p.1.len() + 1).max().unwrap();
        let mut b = TrainingBatch {
            src: Vec::new(),
            src_mask: Vec::new(),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
            tgt_mask: Vec::new(),
            bow_targets: Vec::new(),
            len_targets: Vec::new(),
            vocab_tgt,
        };
        for (src, tgt) in pairs {
            let mut s = src.clone();
            s.resize(s_max, PAD);
            b.src.push(s);
            b.src_mask.push((0..s_max).map(|j| j < src.len()).collect());

            let n = tgt.len();
            let mut tin = vec![BOS];
            tin.extend_from_slice(tgt);
            tin.resize(t_max, PAD);
            let mut tout = tgt.clone();
            tout.push(EOS);
            tout.resize(t_max, PAD);
            b.tgt_in.push(tin);
            b.tgt_out.push(tout);
            b.tgt_mask.push((0..t_max).map(|t| t <= n).collect());

            let mut bows = Vec::with_capacity(t_max);
            let mut lens = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let rest: &[usize] = if t < n { &tgt[t + 1..] } else { &[] };
                bows.push(bow_target(rest, vocab_tgt));
                lens.push(length_target(rest.len(), k_len));
            }
            b.bow_targets.push(bows);
            b.len_targets.push(lens);
        }
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.src.len()
    }

    pub fn tgt_steps(&self) -> usize {
        self.tgt_in[0].len()
    }

    pub fn src_len(&self) -> usize {
        self.src[0].len()
    }

    /// True target length of row `b` (without EOS).
    pub fn target_len(&self, b: usize) -> usize {
        self.tgt_mask[b].iter().filter(|&&m| m).count() - 1
    }

    /// Column `t` of a `B x T` matrix.
    pub fn column<T: Copy>(m: &[Vec<T>], t: usize) -> Vec<T> {
        m.iter().map(|row| row[t]).collect()
    }

    /// Whether the BOW loss uses row `b` at step `t`.
    pub fn bow_active(&self, b: usize, t: usize) -> bool {
        self.tgt_mask[b][t] && !self.bow_targets[b][t].is_skip()
    }
}

fn encode_pair(
    src: &[String],
    tgt: &[String],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> (Vec<usize>, Vec<usize>) {
    (src_vocab.encode(src), tgt_vocab.encode(tgt))
}

/// Splits a corpus into padded batches.
///
/// Pairs are shuffled with a seed-derived order, stably sorted by target
/// length so each batch has little padding, chunked (the last partial batch is
/// kept) and the batch order is shuffled again. Pairs with a side longer than
/// 64 tokens are skipped with a warning.
pub fn make_batches(
    corpus: &ParallelCorpus,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    batch_size: usize,
    k_len: usize,
    seed: u64,
) -> Result<Vec<TrainingBatch>> {
    if corpus.is_empty() {
        return Err(FpbError::contract("make_batches needs a nonempty corpus"));
    }
    if batch_size == 0 {
        return Err(FpbError::config("batch_size", "must be positive"));
    }
    let mut order: Vec<usize> = Vec::with_capacity(corpus.len());
    for (i, (s, t)) in corpus.pairs.iter().enumerate() {
        if s.len() > MAX_SENTENCE_LEN || t.len() > MAX_SENTENCE_LEN {
            log::warn!(
                "skipping pair {i}: lengths {}/{} exceed {MAX_SENTENCE_LEN}",
                s.len(),
                t.len()
            );
            continue;
        }
        order.push(i);
    }
    let mut r = rng::stream(seed, "batches");
    order.shuffle(&mut r);
    order.sort_by_key(|&i| corpus.pairs[i].1.len());
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let ids: Vec<_> = chunk
            .iter()
            .map(|&i| {
                let (s, t) = &corpus.pairs[i];
                encode_pair(s, t, src_vocab, tgt_vocab)
            })
            .collect();
        batches.push(TrainingBatch::from_ids(&ids, tgt_vocab.len(), k_len)?);
    }
    batches.shuffle(&mut r);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::gen_synthetic;
    use crate::data::{tokenize, Task};

    fn vocabs(c: &ParallelCorpus) -> (Vocab, Vocab) {
        (
            Vocab::build(c.sources(), 1000, 1).unwrap(),
            Vocab::build(c.targets(), 1000, 1).unwrap(),
        )
    }

    #[test]
    fn step_targets_for_xyz() {
        let v = Vocab::from_tokens(["x", "y", "z"]).unwrap();
        let tgt = v.encode(&tokenize("x y z"));
        let b = TrainingBatch::from_ids(&[(vec![4], tgt.clone())], v.len(), 50).unwrap();
        // step 1 predicts x, remaining {y, z}
        assert_eq!(b.tgt_out[0][0], v.id("x"));
        assert_eq!(
            b.bow_targets[0][0].entries,
            vec![(v.id("y"), 0.5), (v.id("z"), 0.5)]
        );
        assert_eq!(b.len_targets[0][0], 2);
        // last step predicts EOS
        let last = b.tgt_steps() - 1;
        assert_eq!(b.tgt_out[0][last], EOS);
        assert!(b.bow_targets[0][last].is_skip());
        assert_eq!(b.len_targets[0][last], 0);
    }

    #[test]
    fn every_pair_once_and_partial_batch_kept() {
        let c = gen_synthetic(Task::Copy, 150, 10, (1, 8), 2).unwrap();
        let (sv, tv) = vocabs(&c);
        let batches = make_batches(&c, &sv, &tv, 64, 50, 9).unwrap();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches.iter().map(|b| b.size()).sum::<usize>(), 150);
        let mut seen: Vec<Vec<usize>> = batches
            .iter()
            .flat_map(|b| {
                (0..b.size()).map(|i| {
                    b.src[i]
                        .iter()
                        .cloned()
                        .filter(|&x| x != PAD)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut want: Vec<Vec<usize>> = c.pairs.iter().map(|(s, _)| sv.encode(s)).collect();
        seen.sort();
        want.sort();
        assert_eq!(seen, want);
    }

    #[test]
    fn masks_match_padding() {
        let c = gen_synthetic(Task::Reverse, 40, 10, (1, 12), 4).unwrap();
        let (sv, tv) = vocabs(&c);
        for b in make_batches(&c, &sv, &tv, 16, 50, 1).unwrap() {
            for i in 0..b.size() {
                for (j, &m) in b.src_mask[i].iter().enumerate() {
                    assert_eq!(m, b.src[i][j] != PAD);
                }
                for (t, &m) in b.tgt_mask[i].iter().enumerate() {
                    assert_eq!(m, b.tgt_out[i][t] != PAD);
                }
            }
        }
    }

    #[test]
    fn overlong_pairs_are_skipped() {
        let long: Vec<String> = (0..65).map(|i| format!("w{i}")).collect();
        let c = ParallelCorpus::new(vec![
            (long.clone(), long),
            (tokenize("a b"), tokenize("a b")),
        ])
        .unwrap();
        let (sv, tv) = vocabs(&c);
        let batches = make_batches(&c, &sv, &tv, 8, 50, 0).unwrap();
        assert_eq!(batches.iter().map(|b| b.size()).sum::<usize>(), 1);
    }

    #[test]
    fn same_seed_same_batches() {
        let c = gen_synthetic(Task::Copy, 100, 10, (2, 6), 2).unwrap();
        let (sv, tv) = vocabs(&c);
        let a = make_batches(&c, &sv, &tv, 8, 50, 3).unwrap();
        let b = make_batches(&c, &sv, &tv, 8, 50, 3).unwrap();
        assert_eq!(a, b);
    }
}
