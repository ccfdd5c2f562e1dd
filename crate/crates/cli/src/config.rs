//! Run configuration: a flat TOML file of `key = value` lines, merged with
//! command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use fpb_core::data::Task;
use fpb_core::model::{BowMemory, FpbConfig};
use fpb_core::train::{AdamConfig, TrainConfig};

/// Environment variable naming the default root for run outputs.
pub const OUT_ROOT_ENV: &str = "FPB_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub max_vocab: usize,
    pub min_freq: usize,
    pub seed: u64,

    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_attn: usize,
    pub k_heads: usize,
    pub k_len: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dropout: f64,
    pub bow_memory: BowMemory,
    pub feedback_backprop: bool,
    pub init_range: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub patience: usize,
    pub dev_width: usize,
    pub dev_max_len: usize,
    pub target_dev_bleu: Option<f64>,

    pub width: usize,
    pub max_decode_len: usize,
    pub eos_gate: Option<usize>,
    pub length_norm: bool,

    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = FpbConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            task: None,
            train_path: None,
            dev_path: None,
            test_path: None,
            n_pairs: 2000,
            vocab_size: 20,
            min_len: 3,
            max_len: 10,
            dev_size: 200,
            test_size: 0,
            max_vocab: 50_000,
            min_freq: 1,
            seed: t.seed,
            d_emb: m.d_emb,
            d_hidden: m.d_hidden,
            d_attn: m.d_attn,
            k_heads: m.k_heads,
            k_len: m.k_len,
            lambda1: m.lambda1,
            lambda2: m.lambda2,
            lambda3: m.lambda3,
            dropout: m.dropout_rate,
            bow_memory: m.bow_memory,
            feedback_backprop: m.feedback_backprop,
            init_range: m.init_range,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            clip_norm: t.clip_norm,
            epochs: t.epochs,
            batch_size: t.batch_size,
            log_every: t.log_every,
            patience: t.patience,
            dev_width: t.dev_width,
            dev_max_len: t.dev_max_len,
            target_dev_bleu: None,
            width: 10,
            max_decode_len: 100,
            eos_gate: None,
            length_norm: false,
            out_dir: None,
        }
    }
}

/// Command-line overrides; each wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub train_path: Option<PathBuf>,
    #[arg(long)]
    pub dev_path: Option<PathBuf>,
    #[arg(long)]
    pub test_path: Option<PathBuf>,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d_emb: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub d_attn: Option<usize>,
    #[arg(long)]
    pub k_heads: Option<usize>,
    #[arg(long)]
    pub k_len: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long = "max-decode-len")]
    pub max_decode_len: Option<usize>,
    #[arg(long)]
    pub eos_gate: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($f:ident),*) => {
        $( if let Some(v) = $o.$f.clone() { $cfg.$f = v; } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().trim();
            match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count();
                    let src = text.lines().nth(line).unwrap_or("").trim();
                    anyhow::anyhow!("invalid config at line {} (`{src}`): {msg}", line + 1)
                }
                None => anyhow::anyhow!("invalid config: {msg}"),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// File values (or defaults) with `o` applied on top.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        apply!(c, o; n_pairs, vocab_size, min_len, max_len, dev_size, test_size, seed, d_emb,
            d_hidden, d_attn, k_heads, k_len, lambda1, lambda2, lambda3, dropout, lr, clip_norm,
            epochs, batch_size, patience, width, max_decode_len);
        if o.task.is_some() {
            c.task = o.task;
        }
        for (dst, src) in [
            (&mut c.train_path, &o.train_path),
            (&mut c.dev_path, &o.dev_path),
            (&mut c.test_path, &o.test_path),
            (&mut c.out_dir, &o.out_dir),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        if o.eos_gate.is_some() {
            c.eos_gate = o.eos_gate;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.is_none() && self.train_path.is_none() {
            bail!("task: set a synthetic task or train_path");
        }
        if self.task.is_some() && self.train_path.is_some() {
            bail!("task: cannot combine a synthetic task with train_path");
        }
        if self.task.is_some() {
            if self.min_len == 0 || self.min_len > self.max_len {
                bail!("min_len: need 1 <= min_len <= max_len");
            }
            if self.dev_size == 0 || self.dev_size + self.test_size >= self.n_pairs {
                bail!("dev_size: dev and test must leave training pairs out of n_pairs");
            }
        }
        if self.width == 0 {
            bail!("width: must be >= 1");
        }
        if self.max_decode_len == 0 {
            bail!("max_decode_len: must be >= 1");
        }
        if self.eos_gate == Some(0) {
            bail!("eos_gate: threshold must be >= 1");
        }
        if self.max_vocab < 5 {
            bail!("max_vocab: must be >= 5");
        }
        // vocabulary sizes are checked once the data is known
        self.model_config(5, 5).validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_src: usize, vocab_tgt: usize) -> FpbConfig {
        FpbConfig {
            d_emb: self.d_emb,
            d_hidden: self.d_hidden,
            d_attn: self.d_attn,
            vocab_src,
            vocab_tgt,
            k_heads: self.k_heads,
            k_len: self.k_len,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            dropout_rate: self.dropout,
            use_bow: true,
            use_len: true,
            bow_memory: self.bow_memory,
            feedback_backprop: self.feedback_backprop,
            init_range: self.init_range,
        }
        .normalized()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            log_every: self.log_every,
            patience: self.patience,
            dev_width: self.dev_width,
            dev_max_len: self.dev_max_len,
            target_dev_bleu: self.target_dev_bleu,
            checkpoint_every: None,
            checkpoint_path: None,
            metrics_path: None,
        }
    }

    /// `out_dir`, else `$FPB_OUT_ROOT/<command>`, else `runs/<command>`.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        output_dir(self.out_dir.as_deref(), command)
    }
}

pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(command)
        }
    }
}
