//! Vocabularies, corpora, synthetic tasks and batch assembly.

mod batch;
mod corpus;
pub mod synthetic;
mod vocab;

pub use batch::{make_batches, TrainingBatch};
pub use corpus::{detokenize, tokenize, ParallelCorpus};
pub use synthetic::{gen_synthetic, lexicon_map, Task, MAX_SENTENCE_LEN};
pub use vocab::{Vocab, BOS, EOS, NUM_RESERVED, PAD, UNK};
