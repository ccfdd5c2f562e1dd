use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{FpbError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Bidirectional token/id map; ids `0..4` are PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from regular tokens, in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        for (i, t) in RESERVED.iter().enumerate() {
            v.index.insert(t.to_string(), i);
        }
        for t in tokens {
            let t = t.into();
            if v.index.contains_key(&t) {
                return Err(FpbError::contract(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Most frequent first, ties broken lexicographically; `max_size` counts
    /// the reserved entries.
    pub fn build<'a, I>(sequences: I, max_size: usize, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size < NUM_RESERVED + 1 {
            return Err(FpbError::config("max_size", format!("{max_size} < 5")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_RESERVED);
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(|s| s.as_str())
            .unwrap_or(RESERVED[UNK])
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Content tokens only: stops at EOS, drops PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// Regular tokens (id >= 4) in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    /// One token per line; line `k` (0-based) holds id `k + 4`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in self.regular_tokens() {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            tokens.push(line?);
        }
        Vocab::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Vocab::read_from(std::io::BufReader::new(f))
    }
}
