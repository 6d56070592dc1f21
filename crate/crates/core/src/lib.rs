//! Emergent semantic communication over a noisy symbol channel.
//!
//! A speaker network sees labelled examples of an attribute-value concept and
//! emits a short discrete message; the message crosses a symbol-flip channel;
//! a listener network uses it to pick the concept's members out of a set of
//! candidates. Both agents are trained jointly on the listener's
//! binary cross-entropy through a straight-through Gumbel-softmax relaxation.
//!
//! Modules, bottom-up:
//! - [`world`]: attribute schema, concepts, objects, episodes, seen/unseen split
//! - [`autograd`]: tensors, reverse-mode tape, Gumbel-softmax, Adam
//! - [`agents`]: speaker and listener networks
//! - [`channel`]: per-symbol error channel
//! - [`trainer`]: the training game, convergence detection
//! - [`evalsuite`]: accuracy sweeps, topographic similarity, data sizes
//! - [`marsim`]: offload link accounting for the three transmission modes
//! - [`config`] and [`run`]: run configuration, manifests and output files

pub mod agents;
pub mod autograd;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalsuite;
pub mod marsim;
pub mod output;
pub mod par;
pub mod rng;
pub mod run;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
