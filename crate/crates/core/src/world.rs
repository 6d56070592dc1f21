//! The attribute-value universe the agents talk about.
//!
//! Objects assign one value to every attribute. A concept pins some attributes
//! to single values and leaves the rest free; an object belongs to a concept
//! when it agrees on every pinned attribute.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{EpisodeSide, Error, Result};

/// Largest universe `enumerate_objects` will materialise.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeSchema {
    n_attr: usize,
    n_val: usize,
}

impl AttributeSchema {
    pub fn new(n_attr: usize, n_val: usize) -> Result<Self> {
        if n_attr < 1 {
            return Err(Error::Schema(format!("n_attr must be >= 1, got {n_attr}")));
        }
        if n_val < 2 {
            return Err(Error::Schema(format!("n_val must be >= 2, got {n_val}")));
        }
        Ok(Self { n_attr, n_val })
    }

    pub fn n_attr(&self) -> usize {
        self.n_attr
    }

    pub fn n_val(&self) -> usize {
        self.n_val
    }

    /// `n_val ^ n_attr`, saturating.
    pub fn object_count(&self) -> u128 {
        (self.n_val as u128).saturating_pow(self.n_attr as u32)
    }

    /// Length of the one-hot object encoding.
    pub fn feature_len(&self) -> usize {
        self.n_attr * self.n_val
    }
}

/// A partial specification: each attribute is either free or pinned to one value.
///
/// Stored as one optional value per attribute; [`Concept::matrix`] gives the
/// binary constraint-matrix view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Concept {
    n_val: usize,
    pins: Vec<Option<usize>>,
}

impl Concept {
    pub fn new(schema: &AttributeSchema, pins: Vec<Option<usize>>) -> Result<Self> {
        if pins.len() != schema.n_attr {
            return Err(Error::Schema(format!(
                "concept has {} attributes, schema has {}",
                pins.len(),
                schema.n_attr
            )));
        }
        if let Some(v) = pins.iter().flatten().find(|&&v| v >= schema.n_val) {
            return Err(Error::Schema(format!(
                "pinned value {v} out of range for n_val {}",
                schema.n_val
            )));
        }
        if pins.iter().all(Option::is_none) {
            return Err(Error::Schema("concept must constrain at least one attribute".into()));
        }
        Ok(Self {
            n_val: schema.n_val,
            pins,
        })
    }

    /// Builds a concept from an `n_attr x n_val` binary matrix.
    pub fn from_matrix(schema: &AttributeSchema, matrix: &[Vec<u8>]) -> Result<Self> {
        if matrix.len() != schema.n_attr || matrix.iter().any(|r| r.len() != schema.n_val) {
            return Err(Error::Schema(format!(
                "constraint matrix must be {}x{}",
                schema.n_attr, schema.n_val
            )));
        }
        let mut pins = Vec::with_capacity(schema.n_attr);
        for (a, row) in matrix.iter().enumerate() {
            if row.iter().any(|&x| x > 1) {
                return Err(Error::Schema(format!("row {a} is not binary")));
            }
            let ones: Vec<usize> = (0..row.len()).filter(|&v| row[v] == 1).collect();
            match ones.as_slice() {
                [] => pins.push(None),
                [v] => pins.push(Some(*v)),
                _ => return Err(Error::Schema(format!("row {a} pins more than one value"))),
            }
        }
        Self::new(schema, pins)
    }

    pub fn pins(&self) -> &[Option<usize>] {
        &self.pins
    }

    pub fn n_attr(&self) -> usize {
        self.pins.len()
    }

    pub fn n_constrained(&self) -> usize {
        self.pins.iter().flatten().count()
    }

    pub fn matrix(&self) -> Vec<Vec<u8>> {
        self.pins
            .iter()
            .map(|pin| {
                (0..self.n_val)
                    .map(|v| u8::from(*pin == Some(v)))
                    .collect()
            })
            .collect()
    }

    /// (attribute, value) pairs this concept pins.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pins
            .iter()
            .enumerate()
            .filter_map(|(a, pin)| pin.map(|v| (a, v)))
    }

    /// Hamming distance between the two constraint matrices.
    pub fn matrix_distance(&self, other: &Concept) -> usize {
        self.pins
            .iter()
            .zip(&other.pins)
            .map(|(a, b)| match (a, b) {
                (Some(x), Some(y)) if x == y => 0,
                (Some(_), Some(_)) => 2,
                (None, None) => 0,
                _ => 1,
            })
            .sum()
    }

    /// Number of objects in the universe that satisfy the concept.
    pub fn extension_size(&self) -> u128 {
        let free = self.pins.iter().filter(|p| p.is_none()).count() as u32;
        (self.n_val as u128).pow(free)
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (a, v) in self.pairs() {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{a}={v}")?;
            first = false;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectInstance {
    values: Vec<usize>,
}

impl ObjectInstance {
    pub fn new(schema: &AttributeSchema, values: Vec<usize>) -> Result<Self> {
        if values.len() != schema.n_attr {
            return Err(Error::Schema(format!(
                "object has {} values, schema has {} attributes",
                values.len(),
                schema.n_attr
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v >= schema.n_val) {
            return Err(Error::Schema(format!("value {v} out of range for n_val {}", schema.n_val)));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }
}

pub fn object_satisfies(concept: &Concept, object: &ObjectInstance) -> Result<bool> {
    if concept.n_attr() != object.values.len() {
        return Err(Error::Schema(format!(
            "concept has {} attributes, object has {}",
            concept.n_attr(),
            object.values.len()
        )));
    }
    Ok(satisfies_unchecked(concept, object))
}

fn satisfies_unchecked(concept: &Concept, object: &ObjectInstance) -> bool {
    concept
        .pins
        .iter()
        .zip(&object.values)
        .all(|(pin, &v)| pin.is_none_or(|p| p == v))
}

pub fn enumerate_objects(schema: &AttributeSchema) -> Result<Vec<ObjectInstance>> {
    enumerate_objects_capped(schema, DEFAULT_ENUMERATION_CAP)
}

/// All objects in lexicographic value order (last attribute varies fastest).
pub fn enumerate_objects_capped(schema: &AttributeSchema, cap: usize) -> Result<Vec<ObjectInstance>> {
    let needed = schema.object_count();
    if needed > cap as u128 {
        return Err(Error::Capacity { needed, cap });
    }
    let total = needed as usize;
    let mut out = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut values = vec![0; schema.n_attr];
        for slot in values.iter_mut().rev() {
            *slot = code % schema.n_val;
            code /= schema.n_val;
        }
        out.push(ObjectInstance { values });
    }
    Ok(out)
}

pub fn sample_concept<R: Rng + ?Sized>(
    schema: &AttributeSchema,
    n_constrained: usize,
    rng: &mut R,
) -> Result<Concept> {
    if n_constrained < 1 || n_constrained > schema.n_attr {
        return Err(Error::Argument(format!(
            "n_constrained must be in 1..={}, got {n_constrained}",
            schema.n_attr
        )));
    }
    let mut pins = vec![None; schema.n_attr];
    let mut attrs = index::sample(rng, schema.n_attr, n_constrained).into_vec();
    attrs.sort_unstable();
    for a in attrs {
        pins[a] = Some(rng.random_range(0..schema.n_val));
    }
    Concept::new(schema, pins)
}

/// Concatenated one-hot blocks, one per attribute.
pub fn encode_object(object: &ObjectInstance, schema: &AttributeSchema) -> Vec<f64> {
    let mut out = vec![0.0; schema.feature_len()];
    for (a, &v) in object.values.iter().enumerate() {
        out[a * schema.n_val + v] = 1.0;
    }
    out
}

/// Per-side example counts for one game round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeSpec {
    pub speaker_pos: usize,
    pub speaker_neg: usize,
    pub listener_pos: usize,
    pub listener_neg: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            speaker_pos: 5,
            speaker_neg: 5,
            listener_pos: 5,
            listener_neg: 5,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("speaker_pos", self.speaker_pos),
            ("speaker_neg", self.speaker_neg),
            ("listener_pos", self.listener_pos),
            ("listener_neg", self.listener_neg),
        ];
        for (name, n) in fields {
            if n == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn listener_len(&self) -> usize {
        self.listener_pos + self.listener_neg
    }

    pub fn speaker_len(&self) -> usize {
        self.speaker_pos + self.speaker_neg
    }

    /// Whether every episode for `concept` can be drawn without error.
    pub fn admits(&self, concept: &Concept, schema: &AttributeSchema) -> bool {
        let pos = concept.extension_size();
        let neg = schema.object_count() - pos;
        pos >= self.speaker_pos.max(self.listener_pos) as u128
            && neg >= self.speaker_neg.max(self.listener_neg) as u128
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub concept: Concept,
    /// Labelled speaker view: positives first, then negatives.
    pub speaker_examples: Vec<(ObjectInstance, bool)>,
    pub listener_candidates: Vec<ObjectInstance>,
    /// Y_L, aligned with `listener_candidates`.
    pub listener_labels: Vec<bool>,
    /// Set when the concept had too few members to keep the two positive sets disjoint.
    pub positives_overlap: bool,
}

impl Episode {
    pub fn speaker_positives(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.speaker_examples.iter().filter(|(_, l)| *l).map(|(o, _)| o)
    }

    pub fn speaker_negatives(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.speaker_examples.iter().filter(|(_, l)| !*l).map(|(o, _)| o)
    }
}

fn draw<'a, R: Rng + ?Sized>(
    pool: &[&'a ObjectInstance],
    n: usize,
    side: EpisodeSide,
    rng: &mut R,
) -> Result<Vec<&'a ObjectInstance>> {
    if pool.len() < n {
        return Err(Error::Sampling {
            side,
            needed: n,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

pub fn sample_episode<R: Rng + ?Sized>(
    concept: &Concept,
    spec: &EpisodeSpec,
    universe: &[ObjectInstance],
    rng: &mut R,
) -> Result<Episode> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for object in universe {
        if object_satisfies(concept, object)? {
            positives.push(object);
        } else {
            negatives.push(object);
        }
    }
    if positives.len() < spec.listener_pos {
        return Err(Error::Sampling {
            side: EpisodeSide::ListenerPositive,
            needed: spec.listener_pos,
            available: positives.len(),
        });
    }

    let speaker_pos = draw(&positives, spec.speaker_pos, EpisodeSide::SpeakerPositive, rng)?;
    let speaker_neg = draw(&negatives, spec.speaker_neg, EpisodeSide::SpeakerNegative, rng)?;

    let overlap = positives.len() < spec.speaker_pos + spec.listener_pos;
    let listener_pos = if overlap {
        draw(&positives, spec.listener_pos, EpisodeSide::ListenerPositive, rng)?
    } else {
        let taken: BTreeSet<&ObjectInstance> = speaker_pos.iter().copied().collect();
        let rest: Vec<&ObjectInstance> = positives
            .iter()
            .copied()
            .filter(|o| !taken.contains(o))
            .collect();
        draw(&rest, spec.listener_pos, EpisodeSide::ListenerPositive, rng)?
    };
    let listener_neg = draw(&negatives, spec.listener_neg, EpisodeSide::ListenerNegative, rng)?;

    let mut candidates: Vec<ObjectInstance> = listener_pos
        .into_iter()
        .chain(listener_neg)
        .cloned()
        .collect();
    candidates.shuffle(rng);
    let labels = candidates
        .iter()
        .map(|o| satisfies_unchecked(concept, o))
        .collect();

    let speaker_examples = speaker_pos
        .into_iter()
        .map(|o| (o.clone(), true))
        .chain(speaker_neg.into_iter().map(|o| (o.clone(), false)))
        .collect();

    Ok(Episode {
        concept: concept.clone(),
        speaker_examples,
        listener_candidates: candidates,
        listener_labels: labels,
        positives_overlap: overlap,
    })
}

/// Every concept whose number of pinned attributes lies in `min..=max`, in
/// lexicographic pin order.
pub fn enumerate_concepts(schema: &AttributeSchema, min: usize, max: usize) -> Result<Vec<Concept>> {
    if min < 1 || max > schema.n_attr || min > max {
        return Err(Error::Argument(format!(
            "constrained range {min}..={max} invalid for {} attributes",
            schema.n_attr
        )));
    }
    // Each attribute contributes n_val + 1 choices (free or one of the values).
    let base = schema.n_val + 1;
    let total = (base as u128).saturating_pow(schema.n_attr as u32);
    if total > DEFAULT_ENUMERATION_CAP as u128 {
        return Err(Error::Capacity {
            needed: total,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let mut out = Vec::new();
    for mut code in 0..total as usize {
        let mut pins = vec![None; schema.n_attr];
        for slot in pins.iter_mut().rev() {
            let c = code % base;
            code /= base;
            *slot = c.checked_sub(1);
        }
        let k = pins.iter().flatten().count();
        if (min..=max).contains(&k) {
            out.push(Concept {
                n_val: schema.n_val,
                pins,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSplit {
    pub seen: Vec<Concept>,
    pub unseen: Vec<Concept>,
}

impl ConceptSplit {
    /// (attribute, value) pairs used by unseen concepts but by no seen concept.
    pub fn uncovered_pairs(&self) -> Vec<(usize, usize)> {
        uncovered(&self.seen, &self.unseen)
    }

    /// One concept per line as `attr=value` pairs, seen set first.
    pub fn to_listing(&self) -> String {
        let mut out = String::new();
        for (tag, set) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            for c in set {
                out.push_str(tag);
                out.push('\t');
                out.push_str(&c.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn from_listing(schema: &AttributeSchema, text: &str) -> Result<Self> {
        let mut split = ConceptSplit {
            seen: Vec::new(),
            unseen: Vec::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Format(format!("split listing line {}: {msg}", lineno + 1));
            let (tag, body) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let mut pins = vec![None; schema.n_attr];
            for pair in body.split_whitespace() {
                let (a, v) = pair.split_once('=').ok_or_else(|| bad("expected attr=value"))?;
                let a: usize = a.parse().map_err(|_| bad("attribute not an integer"))?;
                let v: usize = v.parse().map_err(|_| bad("value not an integer"))?;
                if a >= schema.n_attr {
                    return Err(bad("attribute out of range"));
                }
                pins[a] = Some(v);
            }
            let concept = Concept::new(schema, pins)?;
            match tag {
                "seen" => split.seen.push(concept),
                "unseen" => split.unseen.push(concept),
                _ => return Err(bad("tag must be seen or unseen")),
            }
        }
        Ok(split)
    }
}

fn uncovered(seen: &[Concept], unseen: &[Concept]) -> Vec<(usize, usize)> {
    let covered: BTreeSet<(usize, usize)> = seen.iter().flat_map(|c| c.pairs()).collect();
    let needed: BTreeSet<(usize, usize)> = unseen.iter().flat_map(|c| c.pairs()).collect();
    needed.difference(&covered).copied().collect()
}

const SPLIT_ATTEMPTS: usize = 64;

pub fn split_concepts<R: Rng + ?Sized>(
    schema: &AttributeSchema,
    constrained: (usize, usize),
    holdout_fraction: f64,
    rng: &mut R,
) -> Result<ConceptSplit> {
    let census = enumerate_concepts(schema, constrained.0, constrained.1)?;
    split_concept_list(census, holdout_fraction, rng)
}

/// Randomly holds out `holdout_fraction` of `census`, redrawing until every
/// pair used by a held-out concept is also used by a seen one.
pub fn split_concept_list<R: Rng + ?Sized>(
    census: Vec<Concept>,
    holdout_fraction: f64,
    rng: &mut R,
) -> Result<ConceptSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "holdout_fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    if census.len() < 2 {
        return Err(Error::Split(format!("need at least 2 concepts, have {}", census.len())));
    }
    let n_unseen = ((census.len() as f64) * holdout_fraction).round() as usize;
    let n_unseen = n_unseen.clamp(1, census.len() - 1);

    let mut order: Vec<usize> = (0..census.len()).collect();
    for _ in 0..SPLIT_ATTEMPTS {
        order.shuffle(rng);
        let (unseen_idx, seen_idx) = order.split_at(n_unseen);
        let mut unseen_idx = unseen_idx.to_vec();
        let mut seen_idx = seen_idx.to_vec();
        unseen_idx.sort_unstable();
        seen_idx.sort_unstable();
        let split = ConceptSplit {
            seen: seen_idx.iter().map(|&i| census[i].clone()).collect(),
            unseen: unseen_idx.iter().map(|&i| census[i].clone()).collect(),
        };
        if split.uncovered_pairs().is_empty() {
            return Ok(split);
        }
    }
    Err(Error::Split(format!(
        "no split holding out {n_unseen} of {} concepts keeps every unseen pair covered after {SPLIT_ATTEMPTS} draws",
        census.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::HashSet;

    fn s44() -> AttributeSchema {
        AttributeSchema::new(4, 4).unwrap()
    }

    fn pin0(schema: &AttributeSchema, v: usize) -> Concept {
        let mut pins = vec![None; schema.n_attr()];
        pins[0] = Some(v);
        Concept::new(schema, pins).unwrap()
    }

    #[test]
    fn schema_invariants() {
        assert!(AttributeSchema::new(0, 4).is_err());
        assert!(AttributeSchema::new(2, 1).is_err());
        assert_eq!(s44().object_count(), 256);
    }

    #[test]
    fn membership_examples() {
        let schema = AttributeSchema::new(2, 4).unwrap();
        let c = pin0(&schema, 2);
        let obj = |a, b| ObjectInstance::new(&schema, vec![a, b]).unwrap();
        assert!(object_satisfies(&c, &obj(2, 0)).unwrap());
        assert!(!object_satisfies(&c, &obj(1, 0)).unwrap());
        assert!(object_satisfies(&c, &obj(2, 3)).unwrap());
    }

    #[test]
    fn membership_shape_mismatch() {
        let c = pin0(&AttributeSchema::new(2, 4).unwrap(), 1);
        let o = ObjectInstance::new(&AttributeSchema::new(3, 4).unwrap(), vec![1, 0, 0]).unwrap();
        assert!(matches!(object_satisfies(&c, &o), Err(Error::Schema(_))));
    }

    #[test]
    fn concept_invariants() {
        let schema = AttributeSchema::new(2, 3).unwrap();
        assert!(Concept::new(&schema, vec![None, None]).is_err());
        assert!(Concept::from_matrix(&schema, &[vec![1, 1, 0], vec![0, 0, 0]]).is_err());
        let c = Concept::from_matrix(&schema, &[vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        assert_eq!(c.pins(), &[Some(2), None]);
        assert_eq!(c.matrix(), vec![vec![0, 0, 1], vec![0, 0, 0]]);
    }

    #[test]
    fn enumerate_small() {
        let s = AttributeSchema::new(1, 2).unwrap();
        let objs = enumerate_objects(&s).unwrap();
        assert_eq!(objs.iter().map(|o| o.values().to_vec()).collect::<Vec<_>>(), vec![vec![0], vec![1]]);

        let s = AttributeSchema::new(2, 2).unwrap();
        let objs: Vec<Vec<usize>> = enumerate_objects(&s).unwrap().iter().map(|o| o.values().to_vec()).collect();
        assert_eq!(objs, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn enumerate_4x4_unique() {
        let objs = enumerate_objects(&s44()).unwrap();
        let set: HashSet<_> = objs.iter().cloned().collect();
        assert_eq!(objs.len(), 256);
        assert_eq!(set.len(), 256);
    }

    #[test]
    fn enumerate_cap() {
        let s = AttributeSchema::new(10, 10).unwrap();
        assert!(matches!(enumerate_objects(&s), Err(Error::Capacity { .. })));
        assert!(matches!(enumerate_objects_capped(&s44(), 100), Err(Error::Capacity { .. })));
    }

    #[test]
    fn sample_concept_counts() {
        let schema = s44();
        let universe = enumerate_objects(&schema).unwrap();
        let mut rng = seeded(5);
        let full = sample_concept(&schema, 4, &mut rng).unwrap();
        let n = universe.iter().filter(|o| object_satisfies(&full, o).unwrap()).count();
        assert_eq!(n, 1);
        for _ in 0..20 {
            let c = sample_concept(&schema, 1, &mut rng).unwrap();
            let n = universe.iter().filter(|o| object_satisfies(&c, o).unwrap()).count();
            assert_eq!(n, 64);
            assert_eq!(c.extension_size(), 64);
        }
        assert!(sample_concept(&schema, 0, &mut rng).is_err());
        assert!(sample_concept(&schema, 5, &mut rng).is_err());
        assert_eq!(
            sample_concept(&schema, 2, &mut seeded(9)).unwrap(),
            sample_concept(&schema, 2, &mut seeded(9)).unwrap()
        );
    }

    #[test]
    fn episode_default_sizes() {
        let schema = s44();
        let universe = enumerate_objects(&schema).unwrap();
        let c = pin0(&schema, 3);
        let ep = sample_episode(&c, &EpisodeSpec::default(), &universe, &mut seeded(1)).unwrap();
        assert_eq!(ep.listener_candidates.len(), 10);
        assert_eq!(ep.listener_labels.iter().filter(|&&l| l).count(), 5);
        for (o, l) in ep.listener_candidates.iter().zip(&ep.listener_labels) {
            assert_eq!(object_satisfies(&c, o).unwrap(), *l);
        }
        for (o, l) in &ep.speaker_examples {
            assert_eq!(object_satisfies(&c, o).unwrap(), *l);
        }
        assert!(!ep.positives_overlap);
        let spk: HashSet<_> = ep.speaker_positives().collect();
        assert!(ep
            .listener_candidates
            .iter()
            .zip(&ep.listener_labels)
            .all(|(o, &l)| !l || !spk.contains(o)));
    }

    #[test]
    fn episode_pool_too_small() {
        let schema = s44();
        let universe = enumerate_objects(&schema).unwrap();
        let c = Concept::new(&schema, vec![Some(0), Some(1), Some(2), Some(3)]).unwrap();
        let err = sample_episode(&c, &EpisodeSpec::default(), &universe, &mut seeded(1)).unwrap_err();
        assert!(matches!(
            err,
            Error::Sampling {
                side: EpisodeSide::ListenerPositive,
                available: 1,
                ..
            }
        ));
    }

    #[test]
    fn episode_overlap_flagged() {
        let schema = s44();
        let universe = enumerate_objects(&schema).unwrap();
        // 4 members: each side can draw 3 but not disjointly.
        let c = Concept::new(&schema, vec![Some(0), Some(1), Some(2), None]).unwrap();
        let spec = EpisodeSpec {
            speaker_pos: 3,
            speaker_neg: 3,
            listener_pos: 3,
            listener_neg: 3,
        };
        let ep = sample_episode(&c, &spec, &universe, &mut seeded(2)).unwrap();
        assert!(ep.positives_overlap);
        assert!(!spec.admits(&Concept::new(&schema, vec![Some(0); 4]).unwrap(), &schema));
    }

    #[test]
    fn episode_deterministic() {
        let schema = s44();
        let universe = enumerate_objects(&schema).unwrap();
        let c = sample_concept(&schema, 2, &mut seeded(3)).unwrap();
        let a = sample_episode(&c, &EpisodeSpec::default(), &universe, &mut seeded(4)).unwrap();
        let b = sample_episode(&c, &EpisodeSpec::default(), &universe, &mut seeded(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_examples() {
        let s1 = AttributeSchema::new(1, 2).unwrap();
        assert_eq!(encode_object(&ObjectInstance::new(&s1, vec![0]).unwrap(), &s1), vec![1.0, 0.0]);
        let s2 = AttributeSchema::new(2, 2).unwrap();
        assert_eq!(
            encode_object(&ObjectInstance::new(&s2, vec![1, 0]).unwrap(), &s2),
            vec![0.0, 1.0, 1.0, 0.0]
        );
        for o in enumerate_objects(&s44()).unwrap() {
            let e = encode_object(&o, &s44());
            assert_eq!(e.len(), 16);
            assert_eq!(e.iter().filter(|&&x| x == 1.0).count(), 4);
        }
    }

    #[test]
    fn concept_census() {
        let schema = s44();
        let counts: Vec<usize> = (1..=4)
            .map(|k| enumerate_concepts(&schema, k, k).unwrap().len())
            .collect();
        // C(4,k) * 4^k
        assert_eq!(counts, vec![16, 96, 256, 256]);
    }

    #[test]
    fn split_quarter_covers() {
        let schema = s44();
        let split = split_concepts(&schema, (1, 3), 0.25, &mut seeded(11)).unwrap();
        assert_eq!(split.seen.len() + split.unseen.len(), 368);
        assert_eq!(split.unseen.len(), 92);
        let seen_pairs: HashSet<(usize, usize)> = split.seen.iter().flat_map(|c| c.pairs()).collect();
        for a in 0..4 {
            for v in 0..4 {
                assert!(seen_pairs.contains(&(a, v)));
            }
        }
        let seen: HashSet<_> = split.seen.iter().collect();
        assert!(split.unseen.iter().all(|c| !seen.contains(c)));
        assert_eq!(split, split_concepts(&schema, (1, 3), 0.25, &mut seeded(11)).unwrap());
    }

    #[test]
    fn split_rejects_extreme_holdout() {
        let schema = s44();
        assert!(matches!(
            split_concepts(&schema, (1, 3), 0.995, &mut seeded(1)),
            Err(Error::Split(_))
        ));
        assert!(split_concepts(&schema, (1, 3), 1.0, &mut seeded(1)).is_err());
        assert!(split_concepts(&schema, (1, 3), 0.0, &mut seeded(1)).is_err());
    }

    #[test]
    fn split_listing_round_trip() {
        let schema = s44();
        let split = split_concepts(&schema, (1, 2), 0.25, &mut seeded(2)).unwrap();
        let text = split.to_listing();
        assert!(text.lines().next().unwrap().starts_with("seen\t"));
        assert_eq!(ConceptSplit::from_listing(&schema, &text).unwrap(), split);
    }

    #[test]
    fn matrix_distance_matches_entrywise() {
        let schema = s44();
        let cs = enumerate_concepts(&schema, 1, 4).unwrap();
        let mut rng = seeded(8);
        for _ in 0..200 {
            let a = &cs[rng.random_range(0..cs.len())];
            let b = &cs[rng.random_range(0..cs.len())];
            let brute: usize = a
                .matrix()
                .iter()
                .flatten()
                .zip(b.matrix().iter().flatten())
                .filter(|(x, y)| x != y)
                .count();
            assert_eq!(a.matrix_distance(b), brute);
        }
    }
}
