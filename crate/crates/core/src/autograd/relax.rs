//! Relaxed categorical sampling.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard Gumbel noise, `-ln(-ln u)` with `u` uniform on (0, 1).
pub fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let u = u.max(f64::MIN_POSITIVE);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Gumbel-softmax sample over the last axis of `logits`.
///
/// Soft mode returns `softmax((logits + g) / temperature)`. Hard mode returns
/// the one-hot argmax of that soft sample while routing the backward pass
/// through the soft sample (straight-through).
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    hard: bool,
    rng: &mut R,
) -> Result<Var> {
    let noise = gumbel_noise(tape.value(logits).shape(), rng);
    gumbel_softmax_with_noise(tape, logits, noise, temperature, hard)
}

/// As [`gumbel_softmax_sample`] with caller-supplied noise.
pub fn gumbel_softmax_with_noise(
    tape: &mut Tape,
    logits: Var,
    noise: Tensor,
    temperature: f64,
    hard: bool,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let noise = tape.constant(noise);
    let perturbed = tape.add(logits, noise)?;
    let scaled = tape.affine(perturbed, 1.0 / temperature, 0.0);
    let soft = tape.softmax(scaled);
    Ok(if hard { tape.straight_through(soft) } else { soft })
}
