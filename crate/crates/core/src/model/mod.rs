//! The future-prediction model, its losses and checkpoints.

pub mod baseline;
mod checkpoint;
mod config;
mod fpb;
pub mod losses;
mod targets;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use config::{BowMemory, FpbConfig};
pub use fpb::{
    BowPrediction, DecoderState, EncoderState, ForwardPass, FpbModel, LengthPrediction, Noise,
    StepOutput,
};
pub use targets::{bow_target, length_target, BowTarget};
