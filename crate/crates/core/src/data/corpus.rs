use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{FpbError, Result};

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(String::from).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Source/target token sequence pairs; neither side is ever empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Vec<String>, Vec<String>)>) -> Result<Self> {
        if let Some(i) = pairs.iter().position(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(FpbError::contract(format!("pair {i} has an empty side")));
        }
        Ok(ParallelCorpus { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|(s, _)| s.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|(_, t)| t.as_slice())
    }

    /// Splits off the last `n` pairs.
    pub fn split_tail(mut self, n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let at = self.pairs.len().saturating_sub(n);
        let tail = self.pairs.split_off(at);
        (self, ParallelCorpus { pairs: tail })
    }

    /// UTF-8, one pair per line, source and target separated by one tab.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (src, tgt) = line.split_once('\t').ok_or_else(|| FpbError::Parse {
                line: i + 1,
                message: "expected source<TAB>target".into(),
            })?;
            let (s, t) = (tokenize(src), tokenize(tgt));
            if s.is_empty() || t.is_empty() {
                return Err(FpbError::Parse {
                    line: i + 1,
                    message: "empty side".into(),
                });
            }
            pairs.push((s, t));
        }
        Ok(ParallelCorpus { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for (s, t) in &self.pairs {
            writeln!(w, "{}\t{}", detokenize(s), detokenize(t))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_tab_separated_pairs() {
        let c = ParallelCorpus::read_from("a b\tx y z\nc\tw\n".as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0].1, ["x", "y", "z"].map(String::from));
    }

    #[test]
    fn missing_tab_is_parse_error() {
        let err = ParallelCorpus::read_from("a b c\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FpbError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_side_rejected() {
        assert!(ParallelCorpus::new(vec![(vec![], vec!["a".into()])]).is_err());
    }

    proptest! {
        #[test]
        fn whitespace_round_trip(words in proptest::collection::vec("[a-zA-Z0-9]{1,6}", 1..12)) {
            let line = words.join(" ");
            prop_assert_eq!(detokenize(&tokenize(&line)), line);
        }
    }
}
