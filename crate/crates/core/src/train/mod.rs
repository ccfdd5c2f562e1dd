//! Optimisation loop: batching, Adam with global-norm clipping, dev-BLEU early
//! stopping and JSON-lines metrics.

mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};

use crate::autodiff::{ParamStore, Tape};
use crate::data::{make_batches, ParallelCorpus, Vocab};
use crate::decode::{evaluate_bleu, DecodeOptions};
use crate::error::{FpbError, Result};
use crate::model::{save_checkpoint, FpbModel, Noise};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub clip_norm: f64,
    /// Hard cap on epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Steps per metrics record.
    pub log_every: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub dev_width: usize,
    pub dev_max_len: usize,
    /// Stop as soon as dev BLEU reaches this value.
    pub target_dev_bleu: Option<f64>,
    /// Also save the best checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            clip_norm: 10.0,
            epochs: 20,
            batch_size: 64,
            seed: 1,
            log_every: 50,
            patience: 3,
            dev_width: 1,
            dev_max_len: 80,
            target_dev_bleu: None,
            checkpoint_every: None,
            checkpoint_path: None,
            metrics_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.clip_norm > 0.0) {
            return Err(FpbError::config("clip_norm", "must be positive"));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
            ("patience", self.patience),
            ("dev_width", self.dev_width),
            ("dev_max_len", self.dev_max_len),
        ] {
            if v == 0 {
                return Err(FpbError::config(name, "must be positive"));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(FpbError::config("checkpoint_every", "must be positive"));
        }
        Ok(())
    }
}

/// One line of the metrics file. Loss fields are means over the steps the
/// record covers; `dev_bleu` is set only on epoch-end records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_nll: f64,
    pub loss_bow: Option<f64>,
    pub loss_len: Option<f64>,
    pub grad_norm: f64,
    pub dev_bleu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-dev model when a dev set was given, else the last one.
    pub model: FpbModel,
    pub metrics: Vec<MetricsRecord>,
    pub best_dev_bleu: Option<f64>,
    pub epochs_run: usize,
    pub steps: usize,
    pub diverged: bool,
}

#[derive(Default)]
struct Accum {
    n: usize,
    total: f64,
    nll: f64,
    bow: f64,
    len: f64,
    norm: f64,
}

impl Accum {
    fn record(
        &self,
        model: &FpbModel,
        step: usize,
        epoch: usize,
        dev_bleu: Option<f64>,
    ) -> MetricsRecord {
        let n = self.n.max(1) as f64;
        MetricsRecord {
            step,
            epoch,
            loss_total: self.total / n,
            loss_nll: self.nll / n,
            loss_bow: model.uses_bow().then(|| self.bow / n),
            loss_len: model.uses_len().then(|| self.len / n),
            grad_norm: self.norm / n,
            dev_bleu,
        }
    }
}

struct MetricsSink {
    out: Option<BufWriter<File>>,
    records: Vec<MetricsRecord>,
}

impl MetricsSink {
    fn push(&mut self, r: MetricsRecord) -> Result<()> {
        if let Some(w) = &mut self.out {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// The data a run trains on.
pub struct TrainData<'a> {
    pub train: &'a ParallelCorpus,
    pub dev: Option<&'a ParallelCorpus>,
    pub src_vocab: &'a Vocab,
    pub tgt_vocab: &'a Vocab,
}

enum StepResult {
    Ok {
        total: f64,
        nll: f64,
        bow: f64,
        len: f64,
        norm: f64,
    },
    Diverged(String),
}

fn train_step(
    model: &mut FpbModel,
    state: &mut AdamState,
    tape: &mut Tape,
    batch: &crate::data::TrainingBatch,
    noise: &mut Noise,
    cfg: &TrainConfig,
) -> Result<StepResult> {
    tape.clear();
    let pass = match model.forward_batch(tape, batch, noise) {
        Ok(p) => p,
        // NaN reaching a log or softmax input
        Err(FpbError::Domain { op, detail }) => {
            return Ok(StepResult::Diverged(format!("{op}: {detail}")))
        }
        Err(e) => return Err(e),
    };
    let total = tape.value(pass.total).item();
    if !total.is_finite() {
        return Ok(StepResult::Diverged(format!("loss is {total}")));
    }
    let value = |v: Option<crate::autodiff::Var>| v.map_or(0.0, |v| tape.value(v).item());
    let (nll, bow, len) = (
        tape.value(pass.nll).item(),
        value(pass.bow_loss),
        value(pass.len_loss),
    );
    let grads = tape.backward(pass.total)?;
    let mut gm = tape.param_grads(&model.params, &grads);
    let norm = clip_global_norm(&mut gm, cfg.clip_norm)?;
    if !norm.is_finite() {
        return Ok(StepResult::Diverged(format!("gradient norm is {norm}")));
    }
    match adam_step(&mut model.params, &gm, state, &cfg.adam) {
        Ok(()) => {}
        Err(FpbError::Training(msg)) => return Ok(StepResult::Diverged(msg)),
        Err(e) => return Err(e),
    }
    Ok(StepResult::Ok {
        total,
        nll,
        bow,
        len,
        norm,
    })
}

/// Teacher-forced training.
///
/// Each epoch re-batches the corpus with an epoch-specific seed. After every
/// epoch the dev set (if any) is decoded and the best model by BLEU is kept;
/// training stops after `patience` evaluations without improvement or once the
/// epoch cap is reached. A non-finite loss or gradient aborts the run; the
/// best model so far (or the current one) is returned with `diverged` set.
pub fn train(mut model: FpbModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(FpbError::contract("training corpus is empty"));
    }
    if data.src_vocab.len() != model.config.vocab_src
        || data.tgt_vocab.len() != model.config.vocab_tgt
    {
        return Err(FpbError::config(
            "vocab",
            "vocabulary sizes disagree with the model config",
        ));
    }
    let mut sink = MetricsSink {
        out: match &cfg.metrics_path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        },
        records: Vec::new(),
    };
    let dev_opts = DecodeOptions {
        width: cfg.dev_width,
        max_len: cfg.dev_max_len,
        ..DecodeOptions::default()
    };
    let save = |m: &FpbModel| -> Result<()> {
        match &cfg.checkpoint_path {
            Some(p) => save_checkpoint(p, m, data.src_vocab, data.tgt_vocab),
            None => Ok(()),
        }
    };

    let mut state = AdamState::new(&model.params);
    let mut tape = Tape::new();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut epochs_run = 0;
    let mut diverged = false;

    'epochs: for epoch in 1..=cfg.epochs {
        let seed = rng::derive_seed(cfg.seed, &format!("epoch.{epoch}"));
        let batches = make_batches(
            data.train,
            data.src_vocab,
            data.tgt_vocab,
            cfg.batch_size,
            model.config.k_len,
            seed,
        )?;
        let mut noise = Noise::train(rng::stream(seed, "dropout"));
        let mut interval = Accum::default();
        let mut whole = Accum::default();
        for batch in &batches {
            match train_step(&mut model, &mut state, &mut tape, batch, &mut noise, cfg)? {
                StepResult::Diverged(why) => {
                    log::error!("diverged at step {}: {why}", step + 1);
                    diverged = true;
                    break 'epochs;
                }
                StepResult::Ok {
                    total,
                    nll,
                    bow,
                    len,
                    norm,
                } => {
                    step += 1;
                    for a in [&mut interval, &mut whole] {
                        a.n += 1;
                        a.total += total;
                        a.nll += nll;
                        a.bow += bow;
                        a.len += len;
                        a.norm += norm;
                    }
                }
            }
            if step % cfg.log_every == 0 {
                let r = interval.record(&model, step, epoch, None);
                log::info!(
                    "epoch {epoch} step {step} loss {:.4} nll {:.4} |g| {:.3}",
                    r.loss_total,
                    r.loss_nll,
                    r.grad_norm
                );
                sink.push(r)?;
                interval = Accum::default();
            }
        }
        epochs_run = epoch;
        let dev_bleu = match data.dev {
            Some(dev) => Some(evaluate_bleu(
                &model,
                data.src_vocab,
                data.tgt_vocab,
                dev,
                &dev_opts,
            )?),
            None => None,
        };
        let r = whole.record(&model, step, epoch, dev_bleu);
        log::info!(
            "epoch {epoch} done: loss {:.4} dev bleu {:?}",
            r.loss_total,
            dev_bleu
        );
        sink.push(r)?;

        match dev_bleu {
            Some(b) => {
                if best.as_ref().is_none_or(|(bb, _)| b > *bb) {
                    best = Some((b, model.params.clone()));
                    stale = 0;
                    save(&model)?;
                } else {
                    stale += 1;
                }
                if cfg.target_dev_bleu.is_some_and(|t| b >= t) {
                    break;
                }
                if stale >= cfg.patience {
                    log::info!("no dev improvement for {stale} evaluations, stopping");
                    break;
                }
            }
            None => {
                if cfg.checkpoint_every.is_some_and(|k| epoch % k == 0) {
                    save(&model)?;
                }
            }
        }
    }

    let best_dev_bleu = best.as_ref().map(|(b, _)| *b);
    if let Some((_, params)) = best {
        model.params = params;
    }
    if data.dev.is_none() || best_dev_bleu.is_none() {
        save(&model)?;
    }
    Ok(TrainOutcome {
        model,
        metrics: sink.records,
        best_dev_bleu,
        epochs_run,
        steps: step,
        diverged,
    })
}
