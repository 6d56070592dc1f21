//! Speaker and listener networks.
//!
//! Both agents encode objects with a one-hidden-layer MLP over the one-hot
//! object features and process messages with a two-gate recurrent cell.
//! The speaker mean-pools its positive and negative example embeddings,
//! projects the pair into the decoder's initial state and unrolls `L` symbol
//! steps. The listener encodes the message into a vector `z` and scores each
//! candidate embedding `e` as `sigmoid(e^T W z)`.
//!
//! Forward passes are batched: one tape row per episode for message tensors,
//! one row per object for object features.

use rand::Rng;

use crate::autograd::{
    argmax, gumbel_softmax_sample, ParameterStore, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::world::{encode_object, AttributeSchema, ObjectInstance};

/// Architecture sizes shared by both agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AgentConfig {
    pub n_attr: usize,
    pub n_val: usize,
    /// Object-encoder hidden width (H).
    pub hidden: usize,
    /// Embedding and recurrent state width (D).
    pub embed: usize,
    /// Message length (L).
    pub message_len: usize,
    /// Alphabet size (V).
    pub vocab: usize,
}

impl AgentConfig {
    pub fn schema(&self) -> Result<AttributeSchema> {
        AttributeSchema::new(self.n_attr, self.n_val)
    }

    pub fn feature_len(&self) -> usize {
        self.n_attr * self.n_val
    }

    pub fn validate(&self) -> Result<()> {
        self.schema()?;
        if self.message_len < 1 {
            return Err(Error::config("message_len", "must be at least 1"));
        }
        if self.vocab < 2 {
            return Err(Error::config("vocab_size", "must be at least 2"));
        }
        if self.hidden < 1 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.embed < 1 {
            return Err(Error::config("embed", "must be at least 1"));
        }
        Ok(())
    }
}

/// How the speaker turns symbol logits into a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolMode {
    /// Relaxed Gumbel-softmax sample; differentiable, training only.
    Soft,
    /// One-hot forward, soft-sample backward.
    StraightThrough,
    /// Deterministic argmax of the logits, no noise and no gradient.
    Argmax,
}

/// `L` symbols over a `V`-ary alphabet. Each symbol is a probability vector;
/// hard messages hold one-hot vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    symbols: Vec<Vec<f64>>,
    vocab: usize,
}

impl Message {
    pub fn from_indices(indices: &[usize], vocab: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::Argument(format!("vocabulary must be >= 2, got {vocab}")));
        }
        let mut symbols = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= vocab {
                return Err(Error::Argument(format!("symbol {i} outside vocabulary {vocab}")));
            }
            let mut s = vec![0.0; vocab];
            s[i] = 1.0;
            symbols.push(s);
        }
        Ok(Self { symbols, vocab })
    }

    /// Builds a message from per-position distributions, checking each lies
    /// on the simplex.
    pub fn from_distributions(symbols: Vec<Vec<f64>>, vocab: usize) -> Result<Self> {
        for (t, s) in symbols.iter().enumerate() {
            if s.len() != vocab {
                return Err(Error::Contract(format!(
                    "symbol {t} has length {}, vocabulary is {vocab}",
                    s.len()
                )));
            }
            let total: f64 = s.iter().sum();
            if s.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("symbol {t} is not a distribution")));
            }
        }
        Ok(Self { symbols, vocab })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn symbols(&self) -> &[Vec<f64>] {
        &self.symbols
    }

    /// True when every symbol is exactly one-hot.
    pub fn is_hard(&self) -> bool {
        self.symbols.iter().all(|s| {
            s.iter().filter(|&&x| x == 1.0).count() == 1 && s.iter().all(|&x| x == 0.0 || x == 1.0)
        })
    }

    /// Most likely symbol per position (the symbol itself for hard messages).
    pub fn indices(&self) -> Vec<usize> {
        self.symbols.iter().map(|s| argmax(s)).collect()
    }

    pub fn hamming(&self, other: &Message) -> usize {
        self.indices()
            .iter()
            .zip(other.indices())
            .filter(|(a, b)| **a != *b)
            .count()
    }
}

mod names {
    pub const SPK_ENC_W1: &str = "speaker.enc.w1";
    pub const SPK_ENC_B1: &str = "speaker.enc.b1";
    pub const SPK_ENC_W2: &str = "speaker.enc.w2";
    pub const SPK_ENC_B2: &str = "speaker.enc.b2";
    pub const SPK_CTX_W: &str = "speaker.ctx.w";
    pub const SPK_CTX_B: &str = "speaker.ctx.b";
    pub const SPK_GRU: &str = "speaker.gru";
    pub const SPK_OUT_W: &str = "speaker.out.w";
    pub const SPK_OUT_B: &str = "speaker.out.b";
    pub const SPK_EMBED: &str = "speaker.symbol_embed";
    pub const SPK_START: &str = "speaker.start";

    pub const LIS_EMBED: &str = "listener.symbol_embed";
    pub const LIS_GRU: &str = "listener.gru";
    pub const LIS_ENC_W1: &str = "listener.enc.w1";
    pub const LIS_ENC_B1: &str = "listener.enc.b1";
    pub const LIS_ENC_W2: &str = "listener.enc.w2";
    pub const LIS_ENC_B2: &str = "listener.enc.b2";
    pub const LIS_BILINEAR: &str = "listener.bilinear";
}

fn insert_gru<R: Rng + ?Sized>(store: &mut ParameterStore, prefix: &str, d: usize, rng: &mut R) -> Result<()> {
    store.insert_uniform(format!("{prefix}.w_in"), &[d, 3 * d], d, rng)?;
    store.insert_uniform(format!("{prefix}.b_in"), &[1, 3 * d], d, rng)?;
    store.insert_uniform(format!("{prefix}.w_hid"), &[d, 3 * d], d, rng)?;
    store.insert_uniform(format!("{prefix}.b_hid"), &[1, 3 * d], d, rng)?;
    Ok(())
}

/// Fresh parameters for both agents, uniform in `[-a, a]`, `a = 1/sqrt(fan_in)`.
pub fn init_parameters<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> Result<ParameterStore> {
    use names::*;
    cfg.validate()?;
    let (f, h, d, v) = (cfg.feature_len(), cfg.hidden, cfg.embed, cfg.vocab);
    let mut s = ParameterStore::new();
    s.insert_uniform(SPK_ENC_W1, &[f, h], f, rng)?;
    s.insert_uniform(SPK_ENC_B1, &[1, h], f, rng)?;
    s.insert_uniform(SPK_ENC_W2, &[h, d], h, rng)?;
    s.insert_uniform(SPK_ENC_B2, &[1, d], h, rng)?;
    s.insert_uniform(SPK_CTX_W, &[2 * d, d], 2 * d, rng)?;
    s.insert_uniform(SPK_CTX_B, &[1, d], 2 * d, rng)?;
    insert_gru(&mut s, SPK_GRU, d, rng)?;
    s.insert_uniform(SPK_OUT_W, &[d, v], d, rng)?;
    s.insert_uniform(SPK_OUT_B, &[1, v], d, rng)?;
    s.insert_uniform(SPK_EMBED, &[v, d], v, rng)?;
    s.insert_uniform(SPK_START, &[1, d], d, rng)?;

    s.insert_uniform(LIS_EMBED, &[v, d], v, rng)?;
    insert_gru(&mut s, LIS_GRU, d, rng)?;
    s.insert_uniform(LIS_ENC_W1, &[f, h], f, rng)?;
    s.insert_uniform(LIS_ENC_B1, &[1, h], f, rng)?;
    s.insert_uniform(LIS_ENC_W2, &[h, d], h, rng)?;
    s.insert_uniform(LIS_ENC_B2, &[1, d], h, rng)?;
    s.insert_uniform(LIS_BILINEAR, &[d, d], d, rng)?;
    Ok(s)
}

/// Checks that `store` holds exactly the parameters `cfg` implies, with matching shapes.
pub fn check_parameters(cfg: &AgentConfig, store: &ParameterStore) -> Result<()> {
    let reference = init_parameters(cfg, &mut crate::rng::seeded(0))?;
    if reference.len() != store.len() {
        return Err(Error::Compatibility(format!(
            "expected {} parameter tensors, found {}",
            reference.len(),
            store.len()
        )));
    }
    for (name, t) in reference.iter() {
        let got = store
            .get(name)
            .ok_or_else(|| Error::Compatibility(format!("missing parameter `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::Compatibility(format!(
                "`{name}` has shape {:?}, architecture needs {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl Mlp {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let a = tape.matmul(x, self.w1)?;
        let a = tape.add(a, self.b1)?;
        let a = tape.tanh(a);
        let e = tape.matmul(a, self.w2)?;
        tape.add(e, self.b2)
    }
}

/// Two-gate recurrent cell (reset `r`, update `z`).
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    w_in: Var,
    b_in: Var,
    w_hid: Var,
    b_hid: Var,
    width: usize,
}

impl GruCell {
    fn bind(tape: &mut Tape, store: &ParameterStore, prefix: &str, width: usize) -> Result<Self> {
        Ok(Self {
            w_in: tape.param(store, &format!("{prefix}.w_in"))?,
            b_in: tape.param(store, &format!("{prefix}.b_in"))?,
            w_hid: tape.param(store, &format!("{prefix}.w_hid"))?,
            b_hid: tape.param(store, &format!("{prefix}.b_hid"))?,
            width,
        })
    }

    /// `h' = (1 - z) * n + z * h`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let d = self.width;
        let gi = tape.matmul(x, self.w_in)?;
        let gi = tape.add(gi, self.b_in)?;
        let gh = tape.matmul(h, self.w_hid)?;
        let gh = tape.add(gh, self.b_hid)?;

        let (ir, hr) = (tape.slice(gi, 0, d)?, tape.slice(gh, 0, d)?);
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let (iz, hz) = (tape.slice(gi, d, 2 * d)?, tape.slice(gh, d, 2 * d)?);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let (in_, hn) = (tape.slice(gi, 2 * d, 3 * d)?, tape.slice(gh, 2 * d, 3 * d)?);
        let gated = tape.mul(r, hn)?;
        let n = tape.add(in_, gated)?;
        let n = tape.tanh(n);

        let delta = tape.sub(h, n)?;
        let keep = tape.mul(z, delta)?;
        tape.add(n, keep)
    }
}

/// Speaker weights bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SpeakerParams {
    encoder: Mlp,
    ctx_w: Var,
    ctx_b: Var,
    cell: GruCell,
    out_w: Var,
    out_b: Var,
    symbol_embed: Var,
    start: Var,
}

impl SpeakerParams {
    pub fn bind(tape: &mut Tape, store: &ParameterStore, cfg: &AgentConfig) -> Result<Self> {
        use names::*;
        Ok(Self {
            encoder: Mlp {
                w1: tape.param(store, SPK_ENC_W1)?,
                b1: tape.param(store, SPK_ENC_B1)?,
                w2: tape.param(store, SPK_ENC_W2)?,
                b2: tape.param(store, SPK_ENC_B2)?,
            },
            ctx_w: tape.param(store, SPK_CTX_W)?,
            ctx_b: tape.param(store, SPK_CTX_B)?,
            cell: GruCell::bind(tape, store, SPK_GRU, cfg.embed)?,
            out_w: tape.param(store, SPK_OUT_W)?,
            out_b: tape.param(store, SPK_OUT_B)?,
            symbol_embed: tape.param(store, SPK_EMBED)?,
            start: tape.param(store, SPK_START)?,
        })
    }
}

/// Listener weights bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ListenerParams {
    symbol_embed: Var,
    cell: GruCell,
    encoder: Mlp,
    bilinear: Var,
}

impl ListenerParams {
    pub fn bind(tape: &mut Tape, store: &ParameterStore, cfg: &AgentConfig) -> Result<Self> {
        use names::*;
        Ok(Self {
            symbol_embed: tape.param(store, LIS_EMBED)?,
            cell: GruCell::bind(tape, store, LIS_GRU, cfg.embed)?,
            encoder: Mlp {
                w1: tape.param(store, LIS_ENC_W1)?,
                b1: tape.param(store, LIS_ENC_B1)?,
                w2: tape.param(store, LIS_ENC_W2)?,
                b2: tape.param(store, LIS_ENC_B2)?,
            },
            bilinear: tape.param(store, LIS_BILINEAR)?,
        })
    }
}

/// Speaker inputs for a batch of episodes: stacked example features and the
/// per-episode mean-pooling matrices for positives and negatives.
#[derive(Debug, Clone)]
pub struct SpeakerBatch {
    features: Tensor,
    pos_pool: Tensor,
    neg_pool: Tensor,
    episodes: usize,
}

impl SpeakerBatch {
    /// Each view is one episode's labelled examples.
    pub fn new(schema: &AttributeSchema, views: &[&[(ObjectInstance, bool)]]) -> Result<Self> {
        let total: usize = views.iter().map(|v| v.len()).sum();
        let b = views.len();
        let f = schema.feature_len();
        let mut features = Vec::with_capacity(total * f);
        let mut pos_pool = vec![0.0; b * total];
        let mut neg_pool = vec![0.0; b * total];
        let mut row = 0;
        for (e, view) in views.iter().enumerate() {
            let n_pos = view.iter().filter(|(_, l)| *l).count();
            let n_neg = view.len() - n_pos;
            if n_pos == 0 || n_neg == 0 {
                return Err(Error::Contract(format!(
                    "speaker view {e} needs at least one positive and one negative, has {n_pos}/{n_neg}"
                )));
            }
            for (obj, label) in view.iter() {
                features.extend(encode_object(obj, schema));
                if *label {
                    pos_pool[e * total + row] = 1.0 / n_pos as f64;
                } else {
                    neg_pool[e * total + row] = 1.0 / n_neg as f64;
                }
                row += 1;
            }
        }
        Ok(Self {
            features: Tensor::matrix(total, f, features)?,
            pos_pool: Tensor::matrix(b, total, pos_pool)?,
            neg_pool: Tensor::matrix(b, total, neg_pool)?,
            episodes: b,
        })
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }
}

/// Listener candidates for a batch of episodes, with the episode each row belongs to.
#[derive(Debug, Clone)]
pub struct ListenerBatch {
    features: Tensor,
    owner: Vec<usize>,
    episodes: usize,
}

impl ListenerBatch {
    pub fn new(schema: &AttributeSchema, candidates: &[&[ObjectInstance]]) -> Result<Self> {
        let f = schema.feature_len();
        let mut features = Vec::new();
        let mut owner = Vec::new();
        for (e, cands) in candidates.iter().enumerate() {
            if cands.is_empty() {
                return Err(Error::Contract(format!("episode {e} has no listener candidates")));
            }
            for obj in cands.iter() {
                features.extend(encode_object(obj, schema));
                owner.push(e);
            }
        }
        Ok(Self {
            features: Tensor::matrix(owner.len(), f, features)?,
            owner,
            episodes: candidates.len(),
        })
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Episode index of every candidate row.
    pub fn owner(&self) -> &[usize] {
        &self.owner
    }
}

/// Unrolls the speaker; returns one `[episodes, V]` tensor per message position.
#[allow(clippy::too_many_arguments)]
pub fn speak<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &SpeakerParams,
    cfg: &AgentConfig,
    batch: &SpeakerBatch,
    temperature: f64,
    mode: SymbolMode,
    rng: &mut R,
) -> Result<Vec<Var>> {
    let x = tape.constant(batch.features.clone());
    let emb = params.encoder.forward(tape, x)?;
    let pp = tape.constant(batch.pos_pool.clone());
    let np = tape.constant(batch.neg_pool.clone());
    let pos_mean = tape.matmul(pp, emb)?;
    let neg_mean = tape.matmul(np, emb)?;
    let ctx = tape.concat(&[pos_mean, neg_mean])?;
    let h0 = tape.matmul(ctx, params.ctx_w)?;
    let h0 = tape.add(h0, params.ctx_b)?;
    let mut h = tape.tanh(h0);

    let mut input = tape.gather(params.start, &vec![0; batch.episodes])?;
    let mut steps = Vec::with_capacity(cfg.message_len);
    for _ in 0..cfg.message_len {
        h = params.cell.step(tape, input, h)?;
        let logits = tape.matmul(h, params.out_w)?;
        let logits = tape.add(logits, params.out_b)?;
        let symbol = match mode {
            SymbolMode::Soft => gumbel_softmax_sample(tape, logits, temperature, false, rng)?,
            SymbolMode::StraightThrough => gumbel_softmax_sample(tape, logits, temperature, true, rng)?,
            SymbolMode::Argmax => {
                let lv = tape.value(logits);
                let mut one_hot = Tensor::zeros(lv.shape());
                let v = lv.cols();
                for r in 0..lv.rows() {
                    let k = argmax(lv.row(r));
                    one_hot.data_mut()[r * v + k] = 1.0;
                }
                tape.constant(one_hot)
            }
        };
        input = tape.matmul(symbol, params.symbol_embed)?;
        steps.push(symbol);
    }
    Ok(steps)
}

/// Candidate probabilities `[candidates, 1]` given per-position symbol tensors.
pub fn listen(
    tape: &mut Tape,
    params: &ListenerParams,
    cfg: &AgentConfig,
    message: &[Var],
    batch: &ListenerBatch,
) -> Result<Var> {
    let mut h = tape.constant(Tensor::zeros(&[batch.episodes, cfg.embed]));
    for &symbol in message {
        if tape.value(symbol).rows() != batch.episodes {
            return Err(Error::shape(
                "listen",
                format!(
                    "message has {} rows, batch has {} episodes",
                    tape.value(symbol).rows(),
                    batch.episodes
                ),
            ));
        }
        let x = tape.matmul(symbol, params.symbol_embed)?;
        h = params.cell.step(tape, x, h)?;
    }
    let q = tape.matmul(h, params.bilinear)?;
    let q = tape.gather(q, &batch.owner)?;
    let x = tape.constant(batch.features.clone());
    let e = params.encoder.forward(tape, x)?;
    let prod = tape.mul(e, q)?;
    let score = tape.sum_last(prod);
    Ok(tape.sigmoid(score))
}

/// Turns per-position `[episodes, V]` tape values into one message per episode.
pub fn messages_from_steps(tape: &Tape, steps: &[Var], vocab: usize) -> Result<Vec<Message>> {
    let episodes = steps.first().map_or(0, |s| tape.value(*s).rows());
    (0..episodes)
        .map(|e| {
            let symbols = steps.iter().map(|s| tape.value(*s).row(e).to_vec()).collect();
            Message::from_distributions(symbols, vocab)
        })
        .collect()
}

/// Stacks messages into per-position `[messages, V]` constants.
pub fn steps_from_messages(tape: &mut Tape, messages: &[Message], cfg: &AgentConfig) -> Result<Vec<Var>> {
    for (i, m) in messages.iter().enumerate() {
        if m.len() != cfg.message_len || m.vocab() != cfg.vocab {
            return Err(Error::Contract(format!(
                "message {i} is {}x{}, agents expect {}x{}",
                m.len(),
                m.vocab(),
                cfg.message_len,
                cfg.vocab
            )));
        }
    }
    (0..cfg.message_len)
        .map(|t| {
            let data = messages.iter().flat_map(|m| m.symbols()[t].iter().copied()).collect();
            Ok(tape.constant(Tensor::matrix(messages.len(), cfg.vocab, data)?))
        })
        .collect()
}

/// Batched speaker pass producing plain messages.
pub fn speak_messages<R: Rng + ?Sized>(
    store: &ParameterStore,
    cfg: &AgentConfig,
    views: &[&[(ObjectInstance, bool)]],
    temperature: f64,
    mode: SymbolMode,
    rng: &mut R,
) -> Result<Vec<Message>> {
    let schema = cfg.schema()?;
    let batch = SpeakerBatch::new(&schema, views)?;
    let mut tape = Tape::new();
    let params = SpeakerParams::bind(&mut tape, store, cfg)?;
    let steps = speak(&mut tape, &params, cfg, &batch, temperature, mode, rng)?;
    messages_from_steps(&tape, &steps, cfg.vocab)
}

/// Batched listener pass; one probability vector per episode.
pub fn listen_messages(
    store: &ParameterStore,
    cfg: &AgentConfig,
    messages: &[Message],
    candidates: &[&[ObjectInstance]],
) -> Result<Vec<Vec<f64>>> {
    if messages.len() != candidates.len() {
        return Err(Error::Contract(format!(
            "{} messages for {} candidate sets",
            messages.len(),
            candidates.len()
        )));
    }
    let schema = cfg.schema()?;
    let batch = ListenerBatch::new(&schema, candidates)?;
    let mut tape = Tape::new();
    let params = ListenerParams::bind(&mut tape, store, cfg)?;
    let steps = steps_from_messages(&mut tape, messages, cfg)?;
    let probs = listen(&mut tape, &params, cfg, &steps, &batch)?;
    let mut out = vec![Vec::new(); candidates.len()];
    for (p, &e) in tape.value(probs).data().iter().zip(&batch.owner) {
        out[e].push(*p);
    }
    Ok(out)
}

/// Single-episode speaker pass.
pub fn speaker_forward<R: Rng + ?Sized>(
    store: &ParameterStore,
    cfg: &AgentConfig,
    view: &[(ObjectInstance, bool)],
    temperature: f64,
    mode: SymbolMode,
    rng: &mut R,
) -> Result<Message> {
    let mut msgs = speak_messages(store, cfg, &[view], temperature, mode, rng)?;
    Ok(msgs.remove(0))
}

/// Single-episode listener pass: Ŷ_L for `candidates`.
pub fn listener_forward(
    store: &ParameterStore,
    cfg: &AgentConfig,
    message: &Message,
    candidates: &[ObjectInstance],
) -> Result<Vec<f64>> {
    let mut out = listen_messages(store, cfg, std::slice::from_ref(message), &[candidates])?;
    Ok(out.remove(0))
}

/// Mean binary cross-entropy between predictions Ŷ_L and labels Y_L.
pub fn game_loss(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| crate::autograd::bce_term(p, f64::from(u8::from(y))))
        .sum();
    Ok(total / labels.len() as f64)
}
