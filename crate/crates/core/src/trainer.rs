//! The signaling-game training loop and convergence detection.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::agents::{
    init_parameters, listen, speak, AgentConfig, ListenerBatch, ListenerParams, SpeakerBatch,
    SpeakerParams, SymbolMode,
};
use crate::autograd::{
    adam_step, gradient_check, AdamConfig, GradCheckOptions, GradCheckReport, Grads, ParameterStore, Tape, Var,
};
use crate::channel::{transmit_on_tape, ChannelSpec};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{seeded, stream, SimRng};
use crate::world::{
    enumerate_concepts, enumerate_objects, sample_episode, split_concept_list, AttributeSchema,
    Concept, ConceptSplit, Episode, EpisodeSpec, ObjectInstance,
};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub agents: AgentConfig,
    /// Inclusive range of pinned attributes per concept.
    pub constrained: (usize, usize),
    pub episode: EpisodeSpec,
    pub train_epsilon: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Episodes per optimisation step.
    pub batch_size: usize,
    /// Fixed number of gradient shards per step. Shards may run in parallel;
    /// their gradients are summed in shard order.
    pub grad_shards: usize,
    pub adam: AdamConfig,
    pub temp_start: f64,
    pub temp_end: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            agents: AgentConfig {
                n_attr: 4,
                n_val: 4,
                hidden: 64,
                embed: 64,
                message_len: 4,
                vocab: 14,
            },
            constrained: (1, 3),
            episode: EpisodeSpec::default(),
            train_epsilon: 0.0,
            epochs: 100,
            steps_per_epoch: 100,
            batch_size: 32,
            grad_shards: 1,
            adam: AdamConfig::default(),
            temp_start: 2.0,
            temp_end: 0.5,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.agents.validate()?;
        self.episode.validate()?;
        let (lo, hi) = self.constrained;
        if lo < 1 || lo > hi {
            return Err(Error::config("min_constrained", format!("range {lo}..={hi} is empty or starts at 0")));
        }
        if hi > self.agents.n_attr {
            return Err(Error::config(
                "max_constrained",
                format!("{hi} exceeds the {} attributes", self.agents.n_attr),
            ));
        }
        if !(0.0..=1.0).contains(&self.train_epsilon) {
            return Err(Error::config("train_epsilon", format!("{} is outside [0, 1]", self.train_epsilon)));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.steps_per_epoch < 1 {
            return Err(Error::config("steps_per_epoch", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.grad_shards < 1 || self.grad_shards > self.batch_size {
            return Err(Error::config(
                "grad_shards",
                format!("must lie in 1..={}, got {}", self.batch_size, self.grad_shards),
            ));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("beta2", "must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if !(self.temp_start > 0.0 && self.temp_start.is_finite()) {
            return Err(Error::config("temp_start", "must be positive"));
        }
        if !(self.temp_end > 0.0 && self.temp_end.is_finite()) {
            return Err(Error::config("temp_end", "must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("holdout_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Gumbel-softmax temperature for a 0-based epoch, linear from
    /// `temp_start` to `temp_end`.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temp_end;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.temp_start + (self.temp_end - self.temp_start) * t
    }
}

/// The object universe and the concept split a run trains and evaluates on.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub schema: AttributeSchema,
    pub universe: Vec<ObjectInstance>,
    pub split: ConceptSplit,
    /// Concepts in the configured range before filtering.
    pub census: usize,
    /// Concepts dropped because no episode of the configured size exists for them.
    pub inadmissible: usize,
}

impl World {
    /// Enumerates the universe, drops concepts too small (or too large) to
    /// fill an episode, and splits the rest into seen and unseen.
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        let schema = cfg.agents.schema()?;
        let universe = enumerate_objects(&schema)?;
        let census = enumerate_concepts(&schema, cfg.constrained.0, cfg.constrained.1)?;
        let total = census.len();
        let admissible: Vec<Concept> = census
            .into_iter()
            .filter(|c| cfg.episode.admits(c, &schema))
            .collect();
        let inadmissible = total - admissible.len();
        if admissible.is_empty() {
            return Err(Error::Split(format!(
                "no concept with {}..={} pinned attributes admits episodes of {:?}",
                cfg.constrained.0, cfg.constrained.1, cfg.episode
            )));
        }
        let split = split_concept_list(admissible, cfg.holdout_fraction, &mut stream(cfg.seed, "split"))?;
        Ok(Self {
            schema,
            universe,
            split,
            census: total,
            inadmissible,
        })
    }

    /// A world with an explicit split, e.g. one read back from a listing.
    pub fn with_split(cfg: &TrainConfig, split: ConceptSplit) -> Result<Self> {
        let schema = cfg.agents.schema()?;
        let universe = enumerate_objects(&schema)?;
        let census = split.seen.len() + split.unseen.len();
        Ok(Self {
            schema,
            universe,
            split,
            census,
            inadmissible: 0,
        })
    }
}

/// Draws concepts by first picking a constraint count uniformly among the
/// counts present, then a concept uniformly within that group.
#[derive(Debug, Clone)]
pub struct ConceptSampler<'a> {
    groups: Vec<Vec<&'a Concept>>,
}

impl<'a> ConceptSampler<'a> {
    pub fn new(concepts: &'a [Concept]) -> Result<Self> {
        let mut by_k: BTreeMap<usize, Vec<&Concept>> = BTreeMap::new();
        for c in concepts {
            by_k.entry(c.n_constrained()).or_default().push(c);
        }
        if by_k.is_empty() {
            return Err(Error::Argument("cannot sample from an empty concept set".into()));
        }
        Ok(Self {
            groups: by_k.into_values().collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a Concept {
        let group = self.groups.choose(rng).expect("non-empty");
        group.choose(rng).expect("non-empty")
    }
}

/// One row of the training history. `epoch` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_acc: f64,
    pub temperature: f64,
    /// Wall time of the epoch; excluded from reproducibility comparisons.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

struct ShardResult {
    grads: Grads,
    loss: f64,
    correct: usize,
    candidates: usize,
}

/// Forward and backward pass of one shard; the loss is normalised by the
/// whole step's candidate count so shard gradients sum to the batch gradient.
fn shard_pass(
    store: &ParameterStore,
    cfg: &TrainConfig,
    channel: &ChannelSpec,
    episodes: &[Episode],
    temperature: f64,
    norm: f64,
    seed: u64,
) -> Result<ShardResult> {
    let mut rng = seeded(seed);
    let schema = cfg.agents.schema()?;
    let views: Vec<&[(ObjectInstance, bool)]> = episodes.iter().map(|e| e.speaker_examples.as_slice()).collect();
    let cands: Vec<&[ObjectInstance]> = episodes.iter().map(|e| e.listener_candidates.as_slice()).collect();
    let labels: Vec<f64> = episodes
        .iter()
        .flat_map(|e| e.listener_labels.iter().map(|&l| f64::from(u8::from(l))))
        .collect();
    let sbatch = SpeakerBatch::new(&schema, &views)?;
    let lbatch = ListenerBatch::new(&schema, &cands)?;

    let mut tape = Tape::new();
    let sp = SpeakerParams::bind(&mut tape, store, &cfg.agents)?;
    let lp = ListenerParams::bind(&mut tape, store, &cfg.agents)?;
    let sent = speak(&mut tape, &sp, &cfg.agents, &sbatch, temperature, SymbolMode::StraightThrough, &mut rng)?;
    let (received, _) = transmit_on_tape(&mut tape, &sent, channel, &mut rng)?;
    let probs = listen(&mut tape, &lp, &cfg.agents, &received, &lbatch)?;
    let loss = tape.bce_normalized(probs, &labels, norm)?;
    let grads = tape.backward(loss)?.for_store(store);
    let correct = tape
        .value(probs)
        .data()
        .iter()
        .zip(&labels)
        .filter(|(&p, &y)| (p > 0.5) == (y > 0.5))
        .count();
    Ok(ShardResult {
        grads,
        loss: tape.value(loss).item(),
        correct,
        candidates: labels.len(),
    })
}

/// Contiguous, near-equal partition of `0..n` into `parts` ranges.
fn shard_ranges(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts).map(|i| (i * n / parts)..((i + 1) * n / parts)).collect()
}

/// One epoch of `steps_per_epoch` Adam steps on episodes drawn from `seen`.
/// `epoch` is 0-based.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    store: &mut ParameterStore,
    cfg: &TrainConfig,
    world: &World,
    sampler: &ConceptSampler<'_>,
    epoch: usize,
    rng: &mut SimRng,
    exec: Execution,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let temperature = cfg.temperature(epoch);
    let channel = ChannelSpec::new(cfg.train_epsilon)?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for step in 0..cfg.steps_per_epoch {
        let at = |e: Error| e.context(format!("epoch {} step {step}", epoch + 1));
        let mut episodes = Vec::with_capacity(cfg.batch_size);
        for i in 0..cfg.batch_size {
            let concept = sampler.sample(rng);
            let ep = sample_episode(concept, &cfg.episode, &world.universe, rng)
                .map_err(|e| at(e.context(format!("episode {i} (concept {concept})"))))?;
            episodes.push(ep);
        }
        let norm = (cfg.batch_size * cfg.episode.listener_len()) as f64;
        let jobs: Vec<(std::ops::Range<usize>, u64)> = shard_ranges(cfg.batch_size, cfg.grad_shards)
            .into_iter()
            .map(|r| (r, rng.random()))
            .collect();
        let shards = exec
            .try_map(jobs, |(range, seed)| {
                shard_pass(store, cfg, &channel, &episodes[range], temperature, norm, seed)
            })
            .map_err(at)?;
        let mut grads = Grads::zeros_like(store);
        let mut step_loss = 0.0;
        for s in &shards {
            grads.accumulate(&s.grads)?;
            step_loss += s.loss;
            correct += s.correct;
            seen += s.candidates;
        }
        if !step_loss.is_finite() {
            return Err(at(Error::Contract(format!("non-finite loss {step_loss}"))));
        }
        loss_sum += step_loss;
        adam_step(store, &grads, &cfg.adam)?;
    }
    Ok(EpochRecord {
        epoch: epoch + 1,
        mean_loss: loss_sum / cfg.steps_per_epoch as f64,
        mean_acc: correct as f64 / seen as f64,
        temperature,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Parameters and history of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub history: TrainHistory,
    pub world: World,
}

/// Freshly initialised parameters for `cfg`, from the run's `init` stream.
pub fn initial_parameters(cfg: &TrainConfig) -> Result<ParameterStore> {
    init_parameters(&cfg.agents, &mut stream(cfg.seed, "init"))
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn train_with(
    cfg: &TrainConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    let mut store = initial_parameters(cfg)?;
    let sampler = ConceptSampler::new(&world.split.seen)?;
    let mut rng = stream(cfg.seed, "train");
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let record = run_epoch(&mut store, cfg, &world, &sampler, epoch, &mut rng, exec)?;
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(TrainOutcome { store, history, world })
}

pub fn train(cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    train_with(cfg, exec, |_| {})
}

/// Finite-difference check of the whole relaxed game: soft Gumbel-softmax
/// speaker, noiseless channel, listener and loss, on freshly initialised
/// parameters. The episodes and the Gumbel noise are frozen, so every loss
/// evaluation sees the same graph.
pub fn pipeline_gradient_check(
    cfg: &TrainConfig,
    episodes: usize,
    opts: &GradCheckOptions,
) -> Result<(ParameterStore, GradCheckReport)> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    let store = initial_parameters(cfg)?;
    let sampler = ConceptSampler::new(&world.split.seen)?;
    let mut rng = stream(cfg.seed, "gradcheck");
    let eps = (0..episodes.max(1))
        .map(|_| sample_episode(sampler.sample(&mut rng), &cfg.episode, &world.universe, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let noise_seed: u64 = rng.random();
    let schema = cfg.agents.schema()?;
    let views: Vec<&[(ObjectInstance, bool)]> = eps.iter().map(|e| e.speaker_examples.as_slice()).collect();
    let cands: Vec<&[ObjectInstance]> = eps.iter().map(|e| e.listener_candidates.as_slice()).collect();
    let sbatch = SpeakerBatch::new(&schema, &views)?;
    let lbatch = ListenerBatch::new(&schema, &cands)?;
    let labels: Vec<f64> = eps
        .iter()
        .flat_map(|e| e.listener_labels.iter().map(|&l| f64::from(u8::from(l))))
        .collect();
    let channel = ChannelSpec::noiseless();

    let forward = |store: &ParameterStore| -> Result<(Tape, Var)> {
        let mut rng = seeded(noise_seed);
        let mut tape = Tape::new();
        let sp = SpeakerParams::bind(&mut tape, store, &cfg.agents)?;
        let lp = ListenerParams::bind(&mut tape, store, &cfg.agents)?;
        let sent = speak(&mut tape, &sp, &cfg.agents, &sbatch, 1.0, SymbolMode::Soft, &mut rng)?;
        let (received, _) = transmit_on_tape(&mut tape, &sent, &channel, &mut rng)?;
        let probs = listen(&mut tape, &lp, &cfg.agents, &received, &lbatch)?;
        let loss = tape.bce(probs, &labels)?;
        Ok((tape, loss))
    };
    let report = gradient_check(
        &store,
        |s| forward(s).map(|(t, l)| t.value(l).item()),
        |s| {
            let (t, l) = forward(s)?;
            Ok(t.backward(l)?.for_store(s))
        },
        opts,
    )?;
    Ok((store, report))
}

pub const SMOOTHING_WINDOW: usize = 5;
pub const PLATEAU_WINDOW: usize = 10;
pub const PLATEAU_FACTOR: f64 = 1.05;
pub const MIN_HISTORY: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Convergence {
    /// 1-based epoch from which the smoothed loss stays near the plateau.
    Converged { epoch: usize, plateau: f64 },
    NotConverged { plateau: f64 },
}

impl Convergence {
    pub fn epoch(&self) -> Option<usize> {
        match self {
            Convergence::Converged { epoch, .. } => Some(*epoch),
            Convergence::NotConverged { .. } => None,
        }
    }

    pub fn plateau(&self) -> f64 {
        match self {
            Convergence::Converged { plateau, .. } | Convergence::NotConverged { plateau } => *plateau,
        }
    }
}

/// Trailing moving average; the first `window - 1` entries average what is available.
pub fn smooth(losses: &[f64], window: usize) -> Vec<f64> {
    (0..losses.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Convergence epoch of a loss curve.
///
/// The loss is smoothed with a 5-epoch trailing mean and the plateau is the
/// mean of the last 10 smoothed values. The result is the first epoch from
/// which every smoothed value is at most 1.05 times the plateau. Curves whose
/// first such epoch falls inside the plateau window are not converged, and so
/// are curves whose plateau sits above their first smoothed value: a loss that
/// ended higher than it started never came down to anything.
pub fn convergence_epoch(losses: &[f64]) -> Result<Convergence> {
    let n = losses.len();
    if n < MIN_HISTORY {
        return Err(Error::Contract(format!(
            "convergence needs at least {MIN_HISTORY} epochs, history has {n}"
        )));
    }
    let s = smooth(losses, SMOOTHING_WINDOW);
    let plateau = s[n - PLATEAU_WINDOW..].iter().sum::<f64>() / PLATEAU_WINDOW as f64;
    let bound = PLATEAU_FACTOR * plateau;
    let mut first = n;
    while first > 0 && s[first - 1] <= bound {
        first -= 1;
    }
    if first >= n - PLATEAU_WINDOW || plateau > s[0] {
        Ok(Convergence::NotConverged { plateau })
    } else {
        Ok(Convergence::Converged { epoch: first + 1, plateau })
    }
}
