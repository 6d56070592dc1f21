//! Memoryless symbol-flip channel.
//!
//! Each position is independently replaced, with probability ε, by a symbol
//! drawn uniformly from the `V - 1` other symbols.

use rand::Rng;

use crate::agents::Message;
use crate::autograd::{argmax, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    epsilon: f64,
}

impl ChannelSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Argument(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn noiseless() -> Self {
        Self { epsilon: 0.0 }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// A symbol other than `symbol`, uniform over the remaining `vocab - 1`.
pub fn replacement_symbol<R: Rng + ?Sized>(symbol: usize, vocab: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..vocab - 1);
    if r >= symbol {
        r + 1
    } else {
        r
    }
}

/// Draws the flip decision for one position; returns the received symbol.
fn pass_symbol<R: Rng + ?Sized>(symbol: usize, vocab: usize, epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        replacement_symbol(symbol, vocab, rng)
    } else {
        symbol
    }
}

/// Sends a hard message through the channel.
pub fn transmit<R: Rng + ?Sized>(message: &Message, spec: &ChannelSpec, rng: &mut R) -> Result<Message> {
    if !message.is_hard() {
        return Err(Error::Contract(
            "the channel carries discrete symbols; got a soft message".into(),
        ));
    }
    if spec.epsilon == 0.0 {
        return Ok(message.clone());
    }
    let received: Vec<usize> = message
        .indices()
        .into_iter()
        .map(|s| pass_symbol(s, message.vocab(), spec.epsilon, rng))
        .collect();
    Message::from_indices(&received, message.vocab())
}

/// Channel applied inside a training graph.
///
/// `steps` holds one `[episodes, V]` one-hot tensor per message position.
/// Unflipped rows pass through untouched (keeping their adjoints); flipped
/// rows become constant one-hots, so no gradient flows through them.
/// A noiseless channel is the identity and also passes relaxed (soft) rows.
/// Returns the received steps and the number of flipped positions.
pub fn transmit_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    steps: &[Var],
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<(Vec<Var>, usize)> {
    if spec.epsilon == 0.0 {
        return Ok((steps.to_vec(), 0));
    }
    let mut out = Vec::with_capacity(steps.len());
    let mut flips = 0;
    for &step in steps {
        let value = tape.value(step);
        let (rows, vocab) = (value.rows(), value.cols());
        let is_hard = (0..rows).all(|r| {
            let row = value.row(r);
            row.iter().filter(|&&x| x == 1.0).count() == 1 && row.iter().all(|&x| x == 0.0 || x == 1.0)
        });
        if !is_hard {
            return Err(Error::Contract(
                "the channel carries discrete symbols; got soft symbol rows".into(),
            ));
        }
        let mut keep = Tensor::full(value.shape(), 1.0);
        let mut replacement = Tensor::zeros(value.shape());
        let mut any = false;
        for r in 0..rows {
            let sent = argmax(value.row(r));
            let got = pass_symbol(sent, vocab, spec.epsilon, rng);
            if got != sent {
                any = true;
                flips += 1;
                keep.data_mut()[r * vocab..(r + 1) * vocab].fill(0.0);
                replacement.data_mut()[r * vocab + got] = 1.0;
            }
        }
        if !any {
            out.push(step);
            continue;
        }
        let keep = tape.constant(keep);
        let replacement = tape.constant(replacement);
        let kept = tape.mul(step, keep)?;
        out.push(tape.add(kept, replacement)?);
    }
    Ok((out, flips))
}

/// Expected number of flipped positions in a length-`len` message.
pub fn expected_flips(len: usize, epsilon: f64) -> f64 {
    len as f64 * epsilon
}
