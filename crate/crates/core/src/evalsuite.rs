//! Evaluation: accuracy under test-time channel noise, the robustness sweep,
//! the topographic-similarity probe and the data-size comparison.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::agents::{check_parameters, listen_messages, speak_messages, AgentConfig, Message, SymbolMode};
use crate::autograd::{bce_term, ParameterStore};
use crate::channel::{transmit, ChannelSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{derive_seed, seeded, stream};
use crate::trainer::{ConceptSampler, World};
use crate::world::{sample_episode, Concept, EpisodeSpec, ObjectInstance};

/// Episodes evaluated per forward batch; also the unit of rng streams.
pub const EVAL_CHUNK: usize = 32;
pub const DEFAULT_N_EVAL: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptSet {
    Seen,
    Unseen,
}

impl ConceptSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ConceptSet::Seen => "seen",
            ConceptSet::Unseen => "unseen",
        }
    }

    pub fn pick(self, world: &World) -> &[Concept] {
        match self {
            ConceptSet::Seen => &world.split.seen,
            ConceptSet::Unseen => &world.split.unseen,
        }
    }
}

impl fmt::Display for ConceptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Read-only inputs shared by every evaluation of one model.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub store: &'a ParameterStore,
    pub agents: &'a AgentConfig,
    pub episode: &'a EpisodeSpec,
    pub universe: &'a [ObjectInstance],
}

impl<'a> EvalContext<'a> {
    /// Checks the parameters against the runtime architecture.
    pub fn new(
        store: &'a ParameterStore,
        agents: &'a AgentConfig,
        episode: &'a EpisodeSpec,
        universe: &'a [ObjectInstance],
    ) -> Result<Self> {
        check_parameters(agents, store)?;
        Ok(Self {
            store,
            agents,
            episode,
            universe,
        })
    }
}

/// Pooled per-object accuracy over `n_eval` episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub n_eval: usize,
    pub accuracy: f64,
    /// Standard error of the mean per-episode accuracy.
    pub stderr: f64,
    /// Fraction of episodes with every candidate labelled correctly.
    pub exact_match: f64,
    pub mean_loss: f64,
}

struct ChunkStats {
    per_episode: Vec<f64>,
    exact: usize,
    loss_sum: f64,
    correct: usize,
    candidates: usize,
}

fn eval_chunk(
    ctx: &EvalContext<'_>,
    sampler: &ConceptSampler<'_>,
    channel: &ChannelSpec,
    size: usize,
    episode_seed: u64,
    channel_seed: u64,
) -> Result<ChunkStats> {
    let mut rng = seeded(episode_seed);
    let episodes = (0..size)
        .map(|i| {
            let c = sampler.sample(&mut rng);
            sample_episode(c, ctx.episode, ctx.universe, &mut rng)
                .map_err(|e| e.context(format!("evaluation episode {i} (concept {c})")))
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[(ObjectInstance, bool)]> = episodes.iter().map(|e| e.speaker_examples.as_slice()).collect();
    let sent = speak_messages(ctx.store, ctx.agents, &views, 1.0, SymbolMode::Argmax, &mut rng)?;
    let mut crng = seeded(channel_seed);
    let received = sent
        .iter()
        .map(|m| transmit(m, channel, &mut crng))
        .collect::<Result<Vec<_>>>()?;
    let cands: Vec<&[ObjectInstance]> = episodes.iter().map(|e| e.listener_candidates.as_slice()).collect();
    let probs = listen_messages(ctx.store, ctx.agents, &received, &cands)?;

    let mut stats = ChunkStats {
        per_episode: Vec::with_capacity(size),
        exact: 0,
        loss_sum: 0.0,
        correct: 0,
        candidates: 0,
    };
    for (ep, p) in episodes.iter().zip(&probs) {
        let mut ok = 0;
        for (&pi, &y) in p.iter().zip(&ep.listener_labels) {
            ok += usize::from((pi > 0.5) == y);
            stats.loss_sum += bce_term(pi, f64::from(u8::from(y)));
        }
        stats.correct += ok;
        stats.candidates += p.len();
        stats.exact += usize::from(ok == p.len());
        stats.per_episode.push(ok as f64 / p.len() as f64);
    }
    Ok(stats)
}

/// Accuracy of a model on `concepts` with the channel at `test_epsilon`.
///
/// Messages are argmax-decoded and candidates are labelled positive when the
/// listener's probability exceeds 0.5. Episodes are drawn in chunks of
/// [`EVAL_CHUNK`]; chunk `i` takes its episodes from the stream
/// `eval/<label>/episodes/<i>` and its channel noise from
/// `eval/<label>/channel/<i>` under `seed`, so two evaluations that differ only
/// in `test_epsilon` see the same episodes and the same noise draws.
pub fn evaluate(
    ctx: &EvalContext<'_>,
    concepts: &[Concept],
    label: &str,
    test_epsilon: f64,
    n_eval: usize,
    seed: u64,
    exec: Execution,
) -> Result<Accuracy> {
    if n_eval == 0 {
        return Err(Error::Argument("n_eval must be at least 1".into()));
    }
    let channel = ChannelSpec::new(test_epsilon)?;
    let sampler = ConceptSampler::new(concepts)?;
    let chunks: Vec<(usize, usize)> = (0..n_eval.div_ceil(EVAL_CHUNK))
        .map(|i| (i, EVAL_CHUNK.min(n_eval - i * EVAL_CHUNK)))
        .collect();
    let stats = exec.try_map(chunks, |(i, size)| {
        eval_chunk(
            ctx,
            &sampler,
            &channel,
            size,
            derive_seed(seed, &format!("eval/{label}/episodes/{i}")),
            derive_seed(seed, &format!("eval/{label}/channel/{i}")),
        )
    })?;

    let mut per_episode = Vec::with_capacity(n_eval);
    let (mut exact, mut loss, mut correct, mut total) = (0, 0.0, 0, 0);
    for s in stats {
        per_episode.extend(s.per_episode);
        exact += s.exact;
        loss += s.loss_sum;
        correct += s.correct;
        total += s.candidates;
    }
    Ok(Accuracy {
        n_eval,
        accuracy: correct as f64 / total as f64,
        stderr: standard_error(&per_episode),
        exact_match: exact as f64 / n_eval as f64,
        mean_loss: loss / total as f64,
    })
}

/// Sample standard deviation over `sqrt(n)`; zero for fewer than two values.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// One row of the robustness table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub train_epsilon: f64,
    pub test_epsilon: f64,
    pub set: ConceptSet,
    pub seed: u64,
    pub n_eval: usize,
    pub accuracy: f64,
    pub stderr: f64,
    pub exact_match: f64,
}

pub const EVAL_HEADER: [&str; 8] = [
    "train_epsilon",
    "test_epsilon",
    "set",
    "seed",
    "n_eval",
    "accuracy",
    "stderr",
    "exact_match",
];

/// A trained model in the sweep, or the placeholder for one that is missing.
#[derive(Debug, Clone)]
pub struct SweepModel {
    pub train_epsilon: f64,
    pub seed: u64,
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AbsentModel {
    pub train_epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub absent: Vec<AbsentModel>,
}

impl EvalReport {
    /// Mean accuracy over seeds for one grid point, if any rows match.
    pub fn mean_accuracy(&self, train_epsilon: f64, test_epsilon: f64, set: ConceptSet) -> Option<f64> {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.train_epsilon == train_epsilon && r.test_epsilon == test_epsilon && r.set == set)
            .map(|r| r.accuracy)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Evaluates every present model on every (test epsilon, concept set) cell.
///
/// Each model is evaluated on its own world (the split its training seed
/// produced). Rows come out ordered by model, then set, then test epsilon.
/// Cells run through `exec`; every cell's streams derive from the model's
/// seed, so the table does not depend on scheduling.
pub fn robustness_sweep(
    models: &[SweepModel],
    runtime: &AgentConfig,
    test_epsilons: &[f64],
    sets: &[ConceptSet],
    n_eval: usize,
    exec: Execution,
) -> Result<EvalReport> {
    if models.is_empty() || test_epsilons.is_empty() || sets.is_empty() {
        return Err(Error::Argument("robustness sweep needs models, test epsilons and sets".into()));
    }
    let mut report = EvalReport::default();
    let mut present = Vec::new();
    for m in models {
        match &m.checkpoint {
            Some(c) => {
                c.ensure_compatible(runtime)?;
                present.push((m, c, World::build(&c.config)?));
            }
            None => {
                log::warn!("no checkpoint for train_epsilon={} seed={}; skipping", m.train_epsilon, m.seed);
                report.absent.push(AbsentModel {
                    train_epsilon: m.train_epsilon,
                    seed: m.seed,
                });
            }
        }
    }
    let mut cells = Vec::new();
    for (mi, _) in present.iter().enumerate() {
        for &set in sets {
            for &te in test_epsilons {
                cells.push((mi, set, te));
            }
        }
    }
    report.rows = exec.try_map(cells, |(mi, set, te)| {
        let (m, c, world) = &present[mi];
        let ctx = EvalContext::new(&c.store, &c.config.agents, &c.config.episode, &world.universe)?;
        let acc = evaluate(&ctx, set.pick(world), set.as_str(), te, n_eval, c.config.seed, Execution::Sequential)
            .map_err(|e| e.context(format!("train_epsilon={} seed={} set={set} test_epsilon={te}", m.train_epsilon, m.seed)))?;
        Ok::<_, Error>(EvalRow {
            train_epsilon: m.train_epsilon,
            test_epsilon: te,
            set,
            seed: m.seed,
            n_eval,
            accuracy: acc.accuracy,
            stderr: acc.stderr,
            exact_match: acc.exact_match,
        })
    })?;
    Ok(report)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

pub const DEFAULT_NULL_PERMUTATIONS: usize = 200;
pub const DEFAULT_MAX_PAIRS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TopSim {
    /// `None` when all messages (or all meaning distances) are identical.
    pub correlation: Option<f64>,
    pub pairs: usize,
    pub null_mean: f64,
    pub null_p95: f64,
    pub permutations: usize,
}

impl TopSim {
    pub fn exceeds_null(&self) -> bool {
        self.correlation.is_some_and(|c| c > self.null_p95)
    }
}

/// Concept index pairs: all of them when there are at most `max_pairs`,
/// otherwise `max_pairs` distinct pairs drawn at random.
pub fn concept_pairs<R: Rng + ?Sized>(n: usize, max_pairs: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    if all.len() <= max_pairs {
        return all;
    }
    rand::seq::index::sample(rng, all.len(), max_pairs)
        .into_iter()
        .map(|k| all[k])
        .collect()
}

/// Topographic similarity between meanings and messages over `pairs`, plus a
/// null distribution from shuffling which message belongs to which meaning.
pub fn topsim_from_messages<R: Rng + ?Sized>(
    concepts: &[Concept],
    messages: &[Message],
    pairs: &[(usize, usize)],
    permutations: usize,
    rng: &mut R,
) -> Result<TopSim> {
    if concepts.len() != messages.len() || concepts.len() < 2 {
        return Err(Error::Argument(format!(
            "topographic similarity needs matching lists of at least 2, got {} concepts and {} messages",
            concepts.len(),
            messages.len()
        )));
    }
    let meaning: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| concepts[i].matrix_distance(&concepts[j]) as f64)
        .collect();
    let signal = |perm: &[usize]| -> Vec<f64> {
        pairs
            .iter()
            .map(|&(i, j)| messages[perm[i]].hamming(&messages[perm[j]]) as f64)
            .collect()
    };
    let identity: Vec<usize> = (0..messages.len()).collect();
    let correlation = spearman(&meaning, &signal(&identity));

    let mut perm = identity.clone();
    let mut null: Vec<f64> = (0..permutations)
        .map(|_| {
            perm.shuffle(rng);
            spearman(&meaning, &signal(&perm)).unwrap_or(0.0)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let null_mean = if null.is_empty() { 0.0 } else { null.iter().sum::<f64>() / null.len() as f64 };
    let null_p95 = quantile_sorted(&null, 0.95);
    Ok(TopSim {
        correlation,
        pairs: pairs.len(),
        null_mean,
        null_p95,
        permutations,
    })
}

/// Linear-interpolated quantile of sorted data; 0 for empty input.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Probe of a trained model: one fixed representative episode per concept,
/// argmax messages with no channel noise, then [`topsim_from_messages`].
pub fn topographic_similarity(
    ctx: &EvalContext<'_>,
    concepts: &[Concept],
    max_pairs: usize,
    permutations: usize,
    seed: u64,
) -> Result<TopSim> {
    if concepts.len() < 2 {
        return Err(Error::Argument("topographic similarity needs at least 2 concepts".into()));
    }
    let mut erng = stream(seed, "topsim/episodes");
    let episodes = concepts
        .iter()
        .map(|c| sample_episode(c, ctx.episode, ctx.universe, &mut erng))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[(ObjectInstance, bool)]> = episodes.iter().map(|e| e.speaker_examples.as_slice()).collect();
    let messages = speak_messages(ctx.store, ctx.agents, &views, 1.0, SymbolMode::Argmax, &mut erng)?;
    let mut prng = stream(seed, "topsim/pairs");
    let pairs = concept_pairs(concepts.len(), max_pairs, &mut prng);
    topsim_from_messages(concepts, &messages, &pairs, permutations, &mut prng)
}

/// One line of the data-size comparison, sizes in bits.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DataSizeRow {
    pub method: String,
    pub min_bits: u64,
    pub max_bits: u64,
}

pub const DATA_SIZE_HEADER: [&str; 3] = ["method", "min_bits", "max_bits"];
pub const BYTES_PER_KB: u64 = 1024;

/// Raw frame, feature vector and message sizes in bits. A message is `L`
/// one-hot symbols of `V` bits each; a kilobyte is 1024 bytes.
pub fn data_size_report(
    message_len: u64,
    vocab: u64,
    feature_vector_bytes: u64,
    frame_kb: (u64, u64),
) -> Result<Vec<DataSizeRow>> {
    if message_len == 0 || vocab == 0 || feature_vector_bytes == 0 || frame_kb.0 == 0 || frame_kb.0 > frame_kb.1 {
        return Err(Error::Argument("data sizes must be positive with min frame <= max frame".into()));
    }
    let frame = |kb: u64| kb * BYTES_PER_KB * 8;
    let msg = message_len * vocab;
    Ok(vec![
        DataSizeRow {
            method: "raw_video".into(),
            min_bits: frame(frame_kb.0),
            max_bits: frame(frame_kb.1),
        },
        DataSizeRow {
            method: "feature_vector".into(),
            min_bits: feature_vector_bytes * 8,
            max_bits: feature_vector_bytes * 8,
        },
        DataSizeRow {
            method: "emergent_message".into(),
            min_bits: msg,
            max_bits: msg,
        },
    ])
}

/// Right-aligned text rendering of the data-size table.
pub fn data_size_text(rows: &[DataSizeRow]) -> String {
    let cells: Vec<[String; 3]> = std::iter::once(DATA_SIZE_HEADER.map(String::from))
        .chain(rows.iter().map(|r| [r.method.clone(), r.min_bits.to_string(), r.max_bits.to_string()]))
        .collect();
    let mut width = [0usize; 3];
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        out.push_str(&format!(
            "{:<w0$}  {:>w1$}  {:>w2$}\n",
            row[0],
            row[1],
            row[2],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::init_parameters;
    use crate::world::{enumerate_concepts, enumerate_objects, AttributeSchema};

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_hand_case() {
        // d = rank differences (0, -1, 1, 0, 0): rho = 1 - 6*2/(5*24) = 0.9
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 4.0, 5.0];
        assert!((spearman(&x, &y).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(spearman(&x, &[2.0; 5]), None);
    }

    fn small_world() -> (AttributeSchema, Vec<Concept>) {
        let s = AttributeSchema::new(4, 4).unwrap();
        let c = enumerate_concepts(&s, 1, 2).unwrap();
        (s, c)
    }

    /// Message spelling out the constraint matrix, one symbol per attribute:
    /// symbol = pinned value, or n_val for a free attribute.
    fn fingerprint(c: &Concept) -> Message {
        let idx: Vec<usize> = c.pins().iter().map(|p| p.unwrap_or(4)).collect();
        Message::from_indices(&idx, 5).unwrap()
    }

    #[test]
    fn attribute_fingerprints_beat_the_null() {
        let (_, concepts) = small_world();
        let msgs: Vec<Message> = concepts.iter().map(fingerprint).collect();
        let mut rng = seeded(1);
        let pairs = concept_pairs(concepts.len(), usize::MAX, &mut rng);
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 50, &mut rng).unwrap();
        // a changed pin costs 2 in matrix distance but 1 symbol, so the
        // rankings agree closely without being identical
        assert!(t.correlation.unwrap() > 0.5, "{t:?}");
        assert!(t.exceeds_null());
    }

    #[test]
    fn equidistant_meanings_flagged() {
        // every pair of single-pin concepts on one attribute is at distance 2
        let s = AttributeSchema::new(1, 6).unwrap();
        let concepts = enumerate_concepts(&s, 1, 1).unwrap();
        let msgs: Vec<Message> = (0..6).map(|i| Message::from_indices(&[i], 6).unwrap()).collect();
        let pairs = concept_pairs(concepts.len(), usize::MAX, &mut seeded(0));
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 0, &mut seeded(0)).unwrap();
        assert_eq!(t.correlation, None);
    }

    #[test]
    fn flattened_matrix_messages_correlate_one() {
        let (_, concepts) = small_world();
        let msgs: Vec<Message> = concepts
            .iter()
            .map(|c| {
                let bits: Vec<usize> = c.matrix().concat().iter().map(|&b| b as usize).collect();
                Message::from_indices(&bits, 2).unwrap()
            })
            .collect();
        let pairs = concept_pairs(concepts.len(), usize::MAX, &mut seeded(0));
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 20, &mut seeded(0)).unwrap();
        assert!((t.correlation.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_messages_are_uncorrelated() {
        let (_, concepts) = small_world();
        let mut rng = seeded(9);
        let msgs: Vec<Message> = concepts
            .iter()
            .map(|_| Message::from_indices(&(0..4).map(|_| rng.random_range(0..14)).collect::<Vec<_>>(), 14).unwrap())
            .collect();
        let pairs = concept_pairs(concepts.len(), 500, &mut rng);
        assert_eq!(pairs.len(), 500);
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 100, &mut rng).unwrap();
        assert!(t.correlation.unwrap().abs() < 0.1, "{t:?}");
        assert!(t.null_mean.abs() < 0.05);
    }

    #[test]
    fn reversed_construction_is_negative() {
        // meaning distances AB=1 (dropped pin), AC=3, BC=4; message
        // distances AB=3, AC=2, BC=1 reverse that order exactly.
        let s = AttributeSchema::new(2, 2).unwrap();
        let concepts = vec![
            Concept::new(&s, vec![Some(0), None]).unwrap(),
            Concept::new(&s, vec![Some(0), Some(0)]).unwrap(),
            Concept::new(&s, vec![Some(1), Some(1)]).unwrap(),
        ];
        let msgs = vec![
            Message::from_indices(&[1, 1, 1], 2).unwrap(),
            Message::from_indices(&[0, 0, 0], 2).unwrap(),
            Message::from_indices(&[0, 0, 1], 2).unwrap(),
        ];
        let pairs = concept_pairs(3, usize::MAX, &mut seeded(0));
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 0, &mut seeded(0)).unwrap();
        assert!((t.correlation.unwrap() + 1.0).abs() < 1e-12, "{t:?}");
    }

    #[test]
    fn identical_messages_flagged() {
        let (_, concepts) = small_world();
        let m = Message::from_indices(&[1, 2, 3, 4], 14).unwrap();
        let msgs = vec![m; concepts.len()];
        let pairs = concept_pairs(concepts.len(), 300, &mut seeded(2));
        let t = topsim_from_messages(&concepts, &msgs, &pairs, 10, &mut seeded(2)).unwrap();
        assert_eq!(t.correlation, None);
        assert!(!t.exceeds_null());
    }

    #[test]
    fn paper_data_sizes() {
        let rows = data_size_report(4, 14, 384, (70, 100)).unwrap();
        assert_eq!(rows[0], DataSizeRow { method: "raw_video".into(), min_bits: 573_440, max_bits: 819_200 });
        assert_eq!(rows[1].min_bits, 3072);
        assert_eq!(rows[2].min_bits, 56);
        assert!(rows[2].max_bits < rows[1].min_bits && rows[1].max_bits < rows[0].min_bits);
        let text = data_size_text(&rows);
        assert_eq!(text.lines().count(), 4);
        let widths: Vec<usize> = text.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn data_size_rejects_zero() {
        assert!(data_size_report(0, 14, 384, (70, 100)).is_err());
        assert!(data_size_report(4, 14, 384, (100, 70)).is_err());
    }

    #[test]
    fn untrained_model_is_near_chance_and_deterministic() {
        let agents = AgentConfig { n_attr: 4, n_val: 4, hidden: 16, embed: 16, message_len: 4, vocab: 14 };
        let store = init_parameters(&agents, &mut seeded(4)).unwrap();
        let spec = EpisodeSpec::default();
        let s = agents.schema().unwrap();
        let universe = enumerate_objects(&s).unwrap();
        let concepts: Vec<Concept> = enumerate_concepts(&s, 1, 2).unwrap();
        let ctx = EvalContext::new(&store, &agents, &spec, &universe).unwrap();
        let a = evaluate(&ctx, &concepts, "seen", 0.0, 300, 1, Execution::Parallel).unwrap();
        let b = evaluate(&ctx, &concepts, "seen", 0.0, 300, 1, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!((a.accuracy - 0.5).abs() < 0.1, "{a:?}");
        assert!(a.stderr > 0.0);
    }

    #[test]
    fn wrong_architecture_rejected() {
        let agents = AgentConfig { n_attr: 4, n_val: 4, hidden: 8, embed: 8, message_len: 4, vocab: 14 };
        let store = init_parameters(&agents, &mut seeded(4)).unwrap();
        let other = AgentConfig { vocab: 10, ..agents };
        let spec = EpisodeSpec::default();
        let universe = enumerate_objects(&agents.schema().unwrap()).unwrap();
        assert!(matches!(
            EvalContext::new(&store, &other, &spec, &universe),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn standard_error_examples() {
        assert_eq!(standard_error(&[0.5]), 0.0);
        // sd of (0, 1) is sqrt(0.5); / sqrt(2) = 0.5
        assert!((standard_error(&[0.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.0);
        assert!((quantile_sorted(&xs, 0.95) - 3.8).abs() < 1e-12);
    }
}
