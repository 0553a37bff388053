//! Negative sampling: uniform, self-adversarial, and commonsense-aware.
//!
//! The commonsense-aware sampler works in two steps for each side of a
//! positive triple:
//!
//! 1. **Candidate concepts.** On a side where the relation category makes
//!    the entity unique (the tail of an N-1 relation, the head of a 1-N
//!    relation, both sides of 1-1), the candidates are the concepts of the
//!    true entity. Every corruption there is a true negative. On a
//!    non-unique side the candidates are the relation's set-form concepts
//!    for that side.
//! 2. **Weighting.** A pool of corruptions is drawn from the candidate
//!    concepts and scored. Plausibility logits `α·(−E)` are softmax-normalized
//!    over the pool to `p`. A unique side weights each corruption by `p`,
//!    since plausible corruptions are hard negatives. A non-unique side
//!    weights by `1 − p`, since plausible corruptions there are likely false
//!    negatives. The `n` highest-weighted corruptions per side are kept.
//!
//! No emitted corruption is a train triple. Valid and test triples are not
//! consulted.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::commonsense::CommonsenseStore;
use crate::graph::{ConceptId, EntityId, KnowledgeGraph, Side, Triple};
use crate::model::ModelParams;
use crate::profile::{RelationProfile, RelationProfiles};

/// Pools at most this many times larger than the target are enumerated
/// exactly instead of rejection-sampled.
const ENUMERATE_FACTOR: usize = 4;
const MAX_ATTEMPT_FACTOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Uniform,
    SelfAdversarial,
    Cans,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Uniform, Strategy::SelfAdversarial, Strategy::Cans];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::SelfAdversarial => "self-adversarial",
            Strategy::Cans => "cans",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown sampling strategy {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Negatives kept per side.
    pub n: usize,
    /// Softmax temperature.
    pub alpha: f64,
    /// Corruptions scored per side before selecting the top `n`.
    pub pool_size: usize,
    pub use_commonsense: bool,
    pub use_relation_categories: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::Cans,
            n: 2,
            alpha: 1.0,
            pool_size: 2,
            use_commonsense: true,
            use_relation_categories: true,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("sampler.n must be at least 1".into());
        }
        if self.pool_size < self.n {
            return Err(format!(
                "sampler.pool_size ({}) must be at least sampler.n ({})",
                self.pool_size, self.n
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(format!("sampler.alpha must be finite and >= 0, got {}", self.alpha));
        }
        Ok(())
    }
}

/// How softmax probabilities become loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRule {
    /// `w = p`, for sides where the true entity is unique.
    Probability,
    /// `w = 1 − p`, for sides that may hide false negatives.
    Complement,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedNegative {
    pub triple: Triple,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeBatch {
    pub positive: Triple,
    pub head_corrupted: Vec<WeightedNegative>,
    pub tail_corrupted: Vec<WeightedNegative>,
    pub n: usize,
}

impl NegativeBatch {
    pub fn side(&self, side: Side) -> &[WeightedNegative] {
        match side {
            Side::Head => &self.head_corrupted,
            Side::Tail => &self.tail_corrupted,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightedNegative> {
        self.head_corrupted.iter().chain(&self.tail_corrupted)
    }
}

/// Every scored candidate of one side.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPool {
    pub side: Side,
    pub entities: Vec<EntityId>,
    pub energies: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Numerically stable softmax of `alpha · logits`.
pub fn softmax(logits: &[f64], alpha: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|&x| alpha * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (alpha * x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scores `pool` as corruptions of `positive` on `side` and converts the
/// softmax over plausibilities `−E` into weights.
pub fn weigh_pool(
    params: &ModelParams,
    positive: Triple,
    side: Side,
    pool: &[EntityId],
    alpha: f64,
    rule: WeightRule,
) -> WeightedPool {
    let energies: Vec<f64> = pool
        .iter()
        .map(|&e| params.score(positive.with_entity(side, e)))
        .collect();
    let plausibility: Vec<f64> = energies.iter().map(|e| -e).collect();
    let probabilities = if pool.is_empty() {
        Vec::new()
    } else {
        softmax(&plausibility, alpha)
    };
    let weights = probabilities
        .iter()
        .map(|&p| match rule {
            WeightRule::Probability => p,
            WeightRule::Complement => 1.0 - p,
        })
        .collect();
    WeightedPool {
        side,
        entities: pool.to_vec(),
        energies,
        probabilities,
        weights,
    }
}

/// The `n` highest-weighted corruptions, ties broken by ascending entity id.
pub fn select_top(pool: &WeightedPool, positive: Triple, n: usize) -> Vec<WeightedNegative> {
    let mut order: Vec<usize> = (0..pool.entities.len()).collect();
    order.sort_by(|&a, &b| {
        pool.weights[b]
            .total_cmp(&pool.weights[a])
            .then(pool.entities[a].cmp(&pool.entities[b]))
    });
    order
        .into_iter()
        .take(n)
        .map(|i| WeightedNegative {
            triple: positive.with_entity(pool.side, pool.entities[i]),
            weight: pool.weights[i],
        })
        .collect()
}

/// Weight rule for one side given the relation profile. Without relation
/// categories every side uses the probability rule.
pub fn weight_rule(profile: Option<&RelationProfile>, side: Side, use_categories: bool) -> WeightRule {
    match profile {
        Some(p) if use_categories && !p.category.is_unique(side) => WeightRule::Complement,
        Some(_) if use_categories => WeightRule::Probability,
        None if use_categories => WeightRule::Complement,
        _ => WeightRule::Probability,
    }
}

/// Weighs both pools and keeps the top `cfg.n` per side.
pub fn weigh_negatives(
    positive: Triple,
    pool_head: &[EntityId],
    pool_tail: &[EntityId],
    params: &ModelParams,
    cfg: &SamplerConfig,
    profile: Option<&RelationProfile>,
) -> NegativeBatch {
    let side = |side: Side, pool: &[EntityId]| {
        let rule = weight_rule(profile, side, cfg.use_relation_categories);
        let weighted = weigh_pool(params, positive, side, pool, cfg.alpha, rule);
        select_top(&weighted, positive, cfg.n)
    };
    NegativeBatch {
        positive,
        head_corrupted: side(Side::Head, pool_head),
        tail_corrupted: side(Side::Tail, pool_tail),
        n: cfg.n,
    }
}

/// Candidate concepts for corrupting `side` of `positive`.
///
/// A unique side yields the true entity's concepts; a non-unique side (or
/// any side when `profile` is `None`) yields the relation's set-form
/// concepts. Returns `None` when the relation has no commonsense entry.
pub fn candidate_concepts(
    positive: Triple,
    side: Side,
    cs: &CommonsenseStore,
    profile: Option<&RelationProfile>,
    kg: &KnowledgeGraph,
) -> Option<BTreeSet<ConceptId>> {
    if profile.is_some_and(|p| p.category.is_unique(side)) {
        return Some(kg.concepts_of(positive.entity(side)).iter().copied().collect());
    }
    cs.relation_concepts(positive.relation)
        .map(|rc| rc.side(side).clone())
}

/// Drawn corruptions for one side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pool {
    pub entities: Vec<EntityId>,
    /// No concept-constrained candidate survived the exclusions; the pool is
    /// all uniform padding.
    pub used_fallback: bool,
}

pub struct NegativeSampler<'a> {
    kg: &'a KnowledgeGraph,
    cs: &'a CommonsenseStore,
    profiles: &'a RelationProfiles,
    cfg: SamplerConfig,
    all_entities: Vec<EntityId>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(
        kg: &'a KnowledgeGraph,
        cs: &'a CommonsenseStore,
        profiles: &'a RelationProfiles,
        cfg: SamplerConfig,
    ) -> Result<Self, String> {
        cfg.check()?;
        Ok(NegativeSampler {
            kg,
            cs,
            profiles,
            cfg,
            all_entities: (0..kg.num_entities() as u32).map(EntityId).collect(),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn profile(&self, positive: Triple) -> Option<&RelationProfile> {
        self.profiles.get(positive.relation)
    }

    #[inline]
    fn is_valid_corruption(&self, positive: Triple, side: Side, e: EntityId) -> bool {
        e != positive.entity(side) && !self.kg.in_train(positive.with_entity(side, e))
    }

    /// Concepts to draw from under the configured ablations; `None` means
    /// all entities.
    pub fn concepts_for(&self, positive: Triple, side: Side) -> Option<BTreeSet<ConceptId>> {
        if !self.cfg.use_commonsense {
            return None;
        }
        let profile = if self.cfg.use_relation_categories {
            self.profile(positive)
        } else {
            None
        };
        let found = candidate_concepts(positive, side, self.cs, profile, self.kg);
        if found.is_none() {
            log::debug!(
                "relation {} has no commonsense entry; sampling from all concepts",
                self.kg.relation_label(positive.relation)
            );
        }
        found
    }

    /// Members of any concept in `concepts`, sorted and deduplicated.
    fn members(&self, concepts: Option<&BTreeSet<ConceptId>>) -> Cow<'_, [EntityId]> {
        match concepts {
            None => Cow::Borrowed(&self.all_entities),
            Some(set) if set.len() == 1 => {
                Cow::Borrowed(self.kg.entities_of(*set.iter().next().unwrap()))
            }
            Some(set) => {
                let mut v: Vec<EntityId> = set
                    .iter()
                    .flat_map(|&c| self.kg.entities_of(c).iter().copied())
                    .collect();
                v.sort_unstable();
                v.dedup();
                Cow::Owned(v)
            }
        }
    }

    /// Exact set of admissible corruptions: members of `concepts` minus the
    /// positive entity and minus anything forming a train triple.
    pub fn eligible_candidates(
        &self,
        concepts: Option<&BTreeSet<ConceptId>>,
        positive: Triple,
        side: Side,
    ) -> Vec<EntityId> {
        self.members(concepts)
            .iter()
            .copied()
            .filter(|&e| self.is_valid_corruption(positive, side, e))
            .collect()
    }

    /// Draws up to `pool_size` distinct corruptions uniformly from the
    /// concept-constrained candidates, padding with uniform draws over all
    /// entities when too few candidates survive.
    pub fn corruption_pool<R: Rng + ?Sized>(
        &self,
        concepts: Option<&BTreeSet<ConceptId>>,
        positive: Triple,
        side: Side,
        pool_size: usize,
        rng: &mut R,
    ) -> Pool {
        let mut pool = Vec::with_capacity(pool_size);
        let mut seen: HashSet<EntityId> = HashSet::with_capacity(pool_size);
        let members = self.members(concepts);

        if members.len() <= ENUMERATE_FACTOR * pool_size {
            let mut eligible: Vec<EntityId> = members
                .iter()
                .copied()
                .filter(|&e| self.is_valid_corruption(positive, side, e))
                .collect();
            if eligible.len() > pool_size {
                let (chosen, _) = eligible.partial_shuffle(rng, pool_size);
                pool.extend_from_slice(chosen);
            } else {
                pool = eligible;
            }
            seen.extend(pool.iter().copied());
        } else {
            let mut attempts = 0;
            while pool.len() < pool_size && attempts < MAX_ATTEMPT_FACTOR * pool_size {
                attempts += 1;
                let e = members[rng.gen_range(0..members.len())];
                if self.is_valid_corruption(positive, side, e) && seen.insert(e) {
                    pool.push(e);
                }
            }
            if pool.len() < pool_size {
                // low acceptance rate: finish from the exact remainder
                let mut rest: Vec<EntityId> = members
                    .iter()
                    .copied()
                    .filter(|e| !seen.contains(e) && self.is_valid_corruption(positive, side, *e))
                    .collect();
                let need = (pool_size - pool.len()).min(rest.len());
                let (chosen, _) = rest.partial_shuffle(rng, need);
                seen.extend(chosen.iter().copied());
                pool.extend_from_slice(chosen);
            }
        }

        let used_fallback = pool.is_empty();
        if used_fallback && concepts.is_some() {
            log::debug!(
                "empty candidate pool for {:?} on {side}; falling back to uniform",
                self.kg.label_triple(positive)
            );
        }
        if pool.len() < pool_size {
            self.pad_uniform(&mut pool, &mut seen, positive, side, pool_size, rng);
        }
        Pool {
            entities: pool,
            used_fallback,
        }
    }

    fn pad_uniform<R: Rng + ?Sized>(
        &self,
        pool: &mut Vec<EntityId>,
        seen: &mut HashSet<EntityId>,
        positive: Triple,
        side: Side,
        target: usize,
        rng: &mut R,
    ) {
        let n = self.all_entities.len();
        if n == 0 {
            return;
        }
        let need = target - pool.len();
        let mut attempts = 0;
        while pool.len() < target && attempts < MAX_ATTEMPT_FACTOR * need.max(1) {
            attempts += 1;
            let e = EntityId(rng.gen_range(0..n as u32));
            if self.is_valid_corruption(positive, side, e) && seen.insert(e) {
                pool.push(e);
            }
        }
    }

    /// Uniform corruptions with equal weights `1/n`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, positive: Triple, rng: &mut R) -> NegativeBatch {
        let n = self.cfg.n;
        let mut side = |side: Side| {
            let mut pool = Vec::with_capacity(n);
            let mut seen = HashSet::with_capacity(n);
            self.pad_uniform(&mut pool, &mut seen, positive, side, n, rng);
            pool.into_iter()
                .map(|e| WeightedNegative {
                    triple: positive.with_entity(side, e),
                    weight: 1.0 / n as f64,
                })
                .collect()
        };
        let head_corrupted = side(Side::Head);
        let tail_corrupted = side(Side::Tail);
        NegativeBatch {
            positive,
            head_corrupted,
            tail_corrupted,
            n,
        }
    }

    /// Softmax-weighted (`w = p`) corruptions drawn uniformly on both sides.
    pub fn sample_self_adversarial<R: Rng + ?Sized>(
        &self,
        positive: Triple,
        params: &ModelParams,
        rng: &mut R,
    ) -> NegativeBatch {
        let head = self.corruption_pool(None, positive, Side::Head, self.cfg.pool_size, rng);
        let tail = self.corruption_pool(None, positive, Side::Tail, self.cfg.pool_size, rng);
        let side = |side: Side, pool: &[EntityId]| {
            let weighted = weigh_pool(params, positive, side, pool, self.cfg.alpha, WeightRule::Probability);
            select_top(&weighted, positive, self.cfg.n)
        };
        NegativeBatch {
            positive,
            head_corrupted: side(Side::Head, &head.entities),
            tail_corrupted: side(Side::Tail, &tail.entities),
            n: self.cfg.n,
        }
    }

    pub fn sample_cans<R: Rng + ?Sized>(
        &self,
        positive: Triple,
        params: &ModelParams,
        rng: &mut R,
    ) -> NegativeBatch {
        let head_concepts = self.concepts_for(positive, Side::Head);
        let head = self.corruption_pool(head_concepts.as_ref(), positive, Side::Head, self.cfg.pool_size, rng);
        let tail_concepts = self.concepts_for(positive, Side::Tail);
        let tail = self.corruption_pool(tail_concepts.as_ref(), positive, Side::Tail, self.cfg.pool_size, rng);
        weigh_negatives(
            positive,
            &head.entities,
            &tail.entities,
            params,
            &self.cfg,
            self.profile(positive),
        )
    }

    /// Negatives for `positive` under the configured strategy.
    pub fn sample<R: Rng + ?Sized>(&self, positive: Triple, params: &ModelParams, rng: &mut R) -> NegativeBatch {
        match self.cfg.strategy {
            Strategy::Uniform => self.sample_uniform(positive, rng),
            Strategy::SelfAdversarial => self.sample_self_adversarial(positive, params, rng),
            Strategy::Cans => self.sample_cans(positive, params, rng),
        }
    }
}
