use std::cmp::Ordering;

use crate::autodiff::{log_softmax_row, Tape};
use crate::data::{BOS, EOS, PAD};
use crate::error::{FpbError, Result};
use crate::model::{DecoderState, EncoderState, FpbModel, Noise};

/// First id a decoder may emit; PAD and BOS are never generated.
const FIRST_EMITTABLE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub width: usize,
    /// Maximum decoder steps, counting the EOS step.
    pub max_len: usize,
    /// Rank finished hypotheses by mean instead of total log-probability.
    pub length_norm: bool,
    /// Suppress EOS while the predicted remaining-length bucket exceeds this.
    pub eos_gate: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            width: 10,
            max_len: 100,
            length_norm: false,
            eos_gate: None,
        }
    }
}

impl DecodeOptions {
    pub fn greedy(max_len: usize) -> Self {
        DecodeOptions {
            width: 1,
            max_len,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(FpbError::config("width", "must be >= 1"));
        }
        if self.max_len == 0 {
            return Err(FpbError::config("max_len", "must be >= 1"));
        }
        if self.eos_gate == Some(0) {
            return Err(FpbError::config("eos_gate", "threshold must be >= 1"));
        }
        Ok(())
    }
}

/// A partial or finished output sequence. `tokens` excludes BOS and includes the
/// final EOS once finished.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    pub state: DecoderState,
}

impl BeamHypothesis {
    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    fn rank_score(&self, length_norm: bool) -> f64 {
        if length_norm && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

/// Best sequence and its total log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

/// Sets the EOS logit to `-inf` when the most likely remaining-length bucket
/// exceeds `threshold`. Identity when disabled.
pub fn eos_length_gate(logits: &mut [f64], length_probs: &[f64], enabled: bool, threshold: usize) {
    if !enabled {
        return;
    }
    let bucket = argmax(length_probs);
    if bucket > threshold {
        logits[EOS] = f64::NEG_INFINITY;
    }
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct Stepper<'a> {
    model: &'a FpbModel,
    tape: Tape,
    enc: EncoderState,
    noise: Noise,
    opts: &'a DecodeOptions,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a FpbModel, src: &[usize], opts: &'a DecodeOptions) -> Result<Self> {
        if src.is_empty() {
            return Err(FpbError::contract("cannot decode an empty source"));
        }
        let mut tape = Tape::new();
        let mut noise = Noise::eval();
        let enc = model.encode_ids(&mut tape, src, &mut noise)?;
        Ok(Stepper {
            model,
            tape,
            enc,
            noise,
            opts,
        })
    }

    fn initial(&mut self) -> DecoderState {
        self.model.initial_state(&mut self.tape, &self.enc)
    }

    /// Log-probabilities of the next token and the successor state.
    fn step(&mut self, prev: usize, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        let out =
            self.model
                .decode_step(&mut self.tape, &[prev], state, &self.enc, &mut self.noise)?;
        let mut logits = self.tape.value(out.logits).data().to_vec();
        if let (Some(th), Some(len)) = (self.opts.eos_gate, out.length) {
            let probs = self.tape.value(len.probs).data().to_vec();
            eos_length_gate(&mut logits, &probs, true, th);
        }
        logits[PAD] = f64::NEG_INFINITY;
        logits[BOS] = f64::NEG_INFINITY;
        let mut lp = vec![0.0; logits.len()];
        log_softmax_row(&logits, &mut lp);
        Ok((lp, out.state))
    }
}

/// Argmax decoding; the result excludes EOS.
pub fn greedy_decode(model: &FpbModel, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
    Ok(greedy_search(model, src, &DecodeOptions::greedy(max_len))?.tokens)
}

/// Greedy decoding with its score.
pub fn greedy_search(model: &FpbModel, src: &[usize], opts: &DecodeOptions) -> Result<Decoded> {
    opts.validate()?;
    let mut s = Stepper::new(model, src, opts)?;
    let mut state = s.initial();
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..opts.max_len {
        let (lp, next) = s.step(prev, &state)?;
        let w = FIRST_EMITTABLE + argmax(&lp[FIRST_EMITTABLE..]);
        log_prob += lp[w];
        if w == EOS {
            return Ok(Decoded {
                tokens,
                log_prob,
                finished: true,
            });
        }
        tokens.push(w);
        state = next;
        prev = w;
    }
    Ok(Decoded {
        tokens,
        log_prob,
        finished: false,
    })
}

/// Beam search over summed log-probabilities.
///
/// At each step every live hypothesis proposes its `width` best extensions and
/// the `width` best of all proposals survive. Proposals ending in EOS are set
/// aside as finished. Search stops once `width` hypotheses have finished, no
/// live hypothesis remains, or `max_len` steps have run. The best finished
/// hypothesis is returned, else the best live one.
pub fn beam_search(model: &FpbModel, src: &[usize], opts: &DecodeOptions) -> Result<Decoded> {
    opts.validate()?;
    let width = opts.width;
    let mut s = Stepper::new(model, src, opts)?;
    let init = s.initial();
    let mut alive = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
        state: init,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..opts.max_len {
        // (score, parent, token, next state)
        let mut proposals: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(alive.len());
        for (h, hyp) in alive.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (lp, next) = s.step(prev, &hyp.state)?;
            states.push(next);
            let mut cand: Vec<usize> = (FIRST_EMITTABLE..lp.len()).collect();
            cand.sort_by(|&a, &b| {
                lp[b]
                    .partial_cmp(&lp[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            for &w in cand.iter().take(width) {
                if lp[w] == f64::NEG_INFINITY {
                    continue;
                }
                proposals.push((hyp.log_prob + lp[w], h, w));
            }
        }
        proposals.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_alive = Vec::with_capacity(width);
        for &(score, h, w) in proposals.iter().take(width) {
            let mut tokens = alive[h].tokens.clone();
            tokens.push(w);
            let hyp = BeamHypothesis {
                tokens,
                log_prob: score,
                finished: w == EOS,
                state: states[h].clone(),
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next_alive.push(hyp);
            }
        }
        alive = next_alive;
        if finished.len() >= width || alive.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() {
        &alive
    } else {
        &finished
    };
    let best = pool
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.rank_score(opts.length_norm)
                .partial_cmp(&b.rank_score(opts.length_norm))
                .unwrap_or(Ordering::Equal)
                .then(j.cmp(i))
        })
        .map(|(_, h)| h)
        .ok_or_else(|| FpbError::contract("beam search produced no hypothesis"))?;
    Ok(Decoded {
        tokens: best.content().to_vec(),
        log_prob: best.log_prob,
        finished: best.finished,
    })
}

/// Total log-probability the model assigns to `tokens` followed by EOS.
pub fn sequence_log_prob(model: &FpbModel, src: &[usize], tokens: &[usize]) -> Result<f64> {
    let opts = DecodeOptions::greedy(tokens.len() + 1);
    let mut s = Stepper::new(model, src, &opts)?;
    let mut state = s.initial();
    let mut prev = BOS;
    let mut total = 0.0;
    for &w in tokens.iter().chain(std::iter::once(&EOS)) {
        let (lp, next) = s.step(prev, &state)?;
        total += lp[w];
        state = next;
        prev = w;
    }
    Ok(total)
}

/// Decodes with beam search, or greedily when `width == 1`.
pub fn decode(model: &FpbModel, src: &[usize], opts: &DecodeOptions) -> Result<Decoded> {
    if opts.width == 1 {
        greedy_search(model, src, opts)
    } else {
        beam_search(model, src, opts)
    }
}
