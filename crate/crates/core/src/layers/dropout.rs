use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{FpbError, Result};

/// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)`.
/// Returns `x` itself when not training or when `rate == 0`.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(FpbError::config(
            "dropout_rate",
            format!("{rate} not in [0, 1)"),
        ));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}
