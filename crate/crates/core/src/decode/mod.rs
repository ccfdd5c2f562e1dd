//! Greedy and beam decoding, BLEU, and predictor diagnostics.

pub mod analysis;
mod bleu;
mod search;

pub use analysis::{
    bow_accuracy_curve, length_accuracy, spearman, BowAccuracyCurve, BowBin, BowSource,
    LengthSource, ModelPredictor, OraclePredictor, UniformPredictor,
};
pub use bleu::{corpus_bleu, BleuStats, MAX_ORDER};
pub use search::{
    beam_search, decode, eos_length_gate, greedy_decode, greedy_search, sequence_log_prob,
    BeamHypothesis, DecodeOptions, Decoded,
};

use crate::data::{ParallelCorpus, Vocab};
use crate::error::Result;
use crate::model::FpbModel;

/// Decodes every source sentence, returning target tokens in input order.
pub fn translate_all(
    model: &FpbModel,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    sources: &[Vec<String>],
    opts: &DecodeOptions,
) -> Result<Vec<Vec<String>>> {
    sources
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            let out = decode(model, &src_vocab.encode(s), opts)?;
            Ok(tgt_vocab.decode(&out.tokens))
        })
        .collect()
}

/// Corpus BLEU of the model's translations against the corpus targets.
pub fn evaluate_bleu(
    model: &FpbModel,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    corpus: &ParallelCorpus,
    opts: &DecodeOptions,
) -> Result<f64> {
    let hyps = translate_all(
        model,
        src_vocab,
        tgt_vocab,
        &corpus.sources().map(<[String]>::to_vec).collect::<Vec<_>>(),
        opts,
    )?;
    let refs: Vec<Vec<String>> = corpus.targets().map(<[String]>::to_vec).collect();
    corpus_bleu(&hyps, &refs)
}
