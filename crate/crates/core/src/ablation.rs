//! Predictor ablation: the same data and seeds trained under four module
//! settings.

use serde::Serialize;

use crate::data::{ParallelCorpus, Vocab};
use crate::decode::{evaluate_bleu, DecodeOptions};
use crate::error::{FpbError, Result};
use crate::model::{FpbConfig, FpbModel};
use crate::train::{train, TrainConfig, TrainData};

/// Row labels with their `(use_bow, use_len)` settings, in output order.
pub const ROWS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("+length", false, true),
    ("+BOW", true, false),
    ("full", true, true),
];

pub struct CorpusBundle<'a> {
    pub train: &'a ParallelCorpus,
    pub dev: &'a ParallelCorpus,
    /// Scored after training; the dev set is used when absent.
    pub test: Option<&'a ParallelCorpus>,
    pub src_vocab: &'a Vocab,
    pub tgt_vocab: &'a Vocab,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub use_bow: bool,
    pub use_len: bool,
    /// Test BLEU per seed; `None` when that run diverged or failed.
    pub bleu: Vec<Option<f64>>,
}

impl AblationRow {
    /// Median over the successful seeds.
    pub fn median(&self) -> Option<f64> {
        median(&self.bleu.iter().flatten().copied().collect::<Vec<_>>())
    }

    pub fn failed(&self) -> bool {
        self.bleu.iter().any(|b| b.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_else(|| "failed".into())
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for seed in &self.seeds {
            s.push_str(&format!(",seed_{seed}"));
        }
        s.push_str(",median\n");
        for r in &self.rows {
            s.push_str(&r.label);
            for b in &r.bleu {
                s.push(',');
                s.push_str(&fmt_opt(*b));
            }
            s.push(',');
            s.push_str(&fmt_opt(r.median()));
            s.push('\n');
        }
        s
    }

    /// Fixed-width text summary, one line per row.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let med = r
                .median()
                .map(|m| format!("{:.2}", 100.0 * m))
                .unwrap_or_else(|| "failed".into());
            s.push_str(&format!("{:<10} median BLEU {med}\n", r.label));
        }
        s
    }
}

/// Trains every row for every seed and scores it with `eval`.
///
/// Each run starts from `FpbModel::new(row_config, seed)` and trains with
/// `train_cfg` re-seeded by `seed`, so rows differ only in their modules.
pub fn ablation_run(
    base: &FpbConfig,
    train_cfg: &TrainConfig,
    data: &CorpusBundle,
    seeds: &[u64],
    eval: &DecodeOptions,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(FpbError::contract("ablation needs at least one seed"));
    }
    let test = data.test.unwrap_or(data.dev);
    let mut rows = Vec::with_capacity(ROWS.len());
    for (label, use_bow, use_len) in ROWS {
        let cfg = base.with_modules(use_bow, use_len);
        let mut bleu = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = || -> Result<Option<f64>> {
                let model = FpbModel::new(cfg.clone(), seed)?;
                let tc = TrainConfig {
                    seed,
                    checkpoint_path: None,
                    metrics_path: None,
                    ..train_cfg.clone()
                };
                let out = train(
                    model,
                    &TrainData {
                        train: data.train,
                        dev: Some(data.dev),
                        src_vocab: data.src_vocab,
                        tgt_vocab: data.tgt_vocab,
                    },
                    &tc,
                )?;
                if out.diverged {
                    return Ok(None);
                }
                Ok(Some(evaluate_bleu(
                    &out.model,
                    data.src_vocab,
                    data.tgt_vocab,
                    test,
                    eval,
                )?))
            };
            let score = match run() {
                Ok(s) => s,
                Err(e) => {
                    log::error!("{label} seed {seed} failed: {e}");
                    None
                }
            };
            log::info!("{label} seed {seed}: {}", fmt_opt(score));
            bleu.push(score);
        }
        rows.push(AblationRow {
            label: label.to_string(),
            use_bow,
            use_len,
            bleu,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
