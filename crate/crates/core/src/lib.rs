//! Future-prediction sequence-to-sequence translation.
//!
//! An attention encoder-decoder whose decoder also predicts, at every step,
//! the bag of words still to be generated and how many tokens remain. The
//! bag-of-words prediction is fed back into the next decoding step.

pub mod ablation;
pub mod autodiff;
pub mod data;
pub mod decode;
pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{FpbError, Result};
