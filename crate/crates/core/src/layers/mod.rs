//! Parameterised layers on top of the tape.

mod attention;
mod basic;
mod dropout;
mod lstm;

pub use attention::{mask_bias, AdditiveAttention};
pub use basic::{Embedding, Linear};
pub use dropout::dropout;
pub use lstm::{BiLstm, BiLstmOutput, LstmCell};
