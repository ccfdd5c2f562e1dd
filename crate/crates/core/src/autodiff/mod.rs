//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, GradMap, Gradients, Tape, Var};
pub use tensor::{log_softmax_row, softmax_row, Tensor};
