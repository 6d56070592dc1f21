//! Dense f64 tensors, a reverse-mode tape, relaxed categorical sampling and
//! the Adam optimizer.

mod gradcheck;
mod params;
mod relax;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{adam_step, AdamConfig, Grads, ParameterStore};
pub use relax::{gumbel_noise, gumbel_softmax_sample, gumbel_softmax_with_noise};
pub use tape::{argmax, bce_term, sigmoid, softmax_in_place, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
