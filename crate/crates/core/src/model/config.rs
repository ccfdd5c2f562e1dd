use serde::{Deserialize, Serialize};

use crate::error::{FpbError, Result};

/// What the BOW heads attend over when forming `o_{t,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BowMemory {
    /// The decoder's own hidden states `s_1..s_t`.
    History,
    /// Encoder annotations, projected back to `d_hidden`.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpbConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_attn: usize,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub k_heads: usize,
    pub k_len: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dropout_rate: f64,
    pub use_bow: bool,
    pub use_len: bool,
    pub bow_memory: BowMemory,
    /// Let gradients flow through `p_{t-1}` into the previous step via `e_bow`.
    pub feedback_backprop: bool,
    pub init_range: f64,
}

impl Default for FpbConfig {
    fn default() -> Self {
        FpbConfig {
            d_emb: 512,
            d_hidden: 512,
            d_attn: 512,
            vocab_src: 50_000,
            vocab_tgt: 50_000,
            k_heads: 4,
            k_len: 50,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.1,
            dropout_rate: 0.2,
            use_bow: true,
            use_len: true,
            bow_memory: BowMemory::History,
            feedback_backprop: false,
            init_range: 0.08,
        }
    }
}

impl FpbConfig {
    /// Small configuration for tests and toy tasks.
    pub fn tiny(vocab_src: usize, vocab_tgt: usize, d: usize) -> Self {
        FpbConfig {
            d_emb: d,
            d_hidden: d,
            d_attn: d,
            vocab_src,
            vocab_tgt,
            ..FpbConfig::default()
        }
    }

    /// The plain attention encoder-decoder this model extends.
    pub fn baseline(&self) -> Self {
        self.with_modules(false, false)
    }

    /// Toggles the two predictors; a disabled predictor's loss weight is zeroed.
    pub fn with_modules(&self, use_bow: bool, use_len: bool) -> Self {
        let mut c = self.clone();
        c.use_bow = use_bow;
        c.use_len = use_len;
        if !use_bow {
            c.lambda2 = 0.0;
        }
        if !use_len {
            c.lambda3 = 0.0;
        }
        c
    }

    /// A zero loss weight switches the corresponding predictor off.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.use_bow &= c.lambda2 > 0.0;
        c.use_len &= c.lambda3 > 0.0;
        if !c.use_bow {
            c.lambda2 = 0.0;
        }
        if !c.use_len {
            c.lambda3 = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_emb", self.d_emb),
            ("d_hidden", self.d_hidden),
            ("d_attn", self.d_attn),
            ("vocab_src", self.vocab_src),
            ("vocab_tgt", self.vocab_tgt),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(FpbError::config(name, "must be positive"));
            }
        }
        if self.vocab_tgt < 5 || self.vocab_src < 5 {
            return Err(FpbError::config(
                "vocab",
                "needs at least one regular token",
            ));
        }
        if self.k_heads < 1 {
            return Err(FpbError::config("k_heads", "must be >= 1"));
        }
        if self.k_len < 2 {
            return Err(FpbError::config("k_len", "must be >= 2"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FpbError::config(
                    name,
                    format!("{v} must be finite and >= 0"),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(FpbError::config(
                "dropout_rate",
                format!("{} not in [0, 1)", self.dropout_rate),
            ));
        }
        if !(self.init_range >= 0.0) {
            return Err(FpbError::config("init_range", "must be >= 0"));
        }
        Ok(())
    }
}
