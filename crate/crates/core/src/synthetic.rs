//! Seeded knowledge graphs with planted concept structure.
//!
//! Each entity gets a latent point near the center of its concept. A
//! relation joins one head concept to one tail concept and carries a latent
//! translation; the tails of a head are the entities of the tail concept
//! nearest to the translated head. Facts are therefore consistent with both
//! the concept-level commonsense and a translational embedding.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{RawConcept, RawDataset, RawTriple};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub entities_per_concept: usize,
    pub relations: usize,
    pub latent_dim: usize,
    /// Spread of entities around their concept center, relative to the
    /// spacing between centers.
    pub spread: f64,
    /// Probability that a head entity takes part in a relation.
    pub link_probability: f64,
    /// Largest number of tails per head; relation `r` uses `1 + r % max_fanout`.
    pub max_fanout: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// About 50 triples.
    pub fn tiny(seed: u64) -> Self {
        SyntheticSpec {
            concepts: 4,
            entities_per_concept: 12,
            relations: 6,
            latent_dim: 4,
            spread: 0.5,
            link_probability: 0.5,
            max_fanout: 2,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }

    /// Ten concepts and twenty relations, about 1,000 triples. Most
    /// entities lie outside any given relation's concepts.
    pub fn planted(seed: u64) -> Self {
        SyntheticSpec {
            concepts: 10,
            entities_per_concept: 30,
            relations: 20,
            latent_dim: 6,
            spread: 0.5,
            link_probability: 0.7,
            max_fanout: 4,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }

    /// About 650 triples over six concepts.
    pub fn small(seed: u64) -> Self {
        SyntheticSpec {
            concepts: 6,
            entities_per_concept: 40,
            relations: 12,
            latent_dim: 6,
            spread: 0.5,
            link_probability: 0.7,
            max_fanout: 3,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }
}

pub fn entity_label(concept: usize, index: usize) -> String {
    format!("c{concept:02}_e{index:03}")
}

pub fn concept_label(concept: usize) -> String {
    format!("c{concept:02}")
}

pub fn relation_label(relation: usize) -> String {
    format!("r{relation:02}")
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Generates the dataset. Valid and test triples only mention entities and
/// relations that also occur in train.
pub fn planted_dataset(spec: &SyntheticSpec) -> RawDataset {
    assert!(spec.concepts >= 2 && spec.entities_per_concept >= 1 && spec.latent_dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.entities_per_concept;
    let unit = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..spec.latent_dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
    };
    let centers: Vec<Vec<f64>> = (0..spec.concepts).map(|_| unit(&mut rng, 1.0)).collect();
    let points: Vec<Vec<f64>> = (0..spec.concepts * m)
        .map(|g| {
            let noise = unit(&mut rng, spec.spread);
            centers[g / m].iter().zip(noise).map(|(c, n)| c + n).collect()
        })
        .collect();
    let label = |global: usize| entity_label(global / m, global % m);

    let mut triples = Vec::new();
    for r in 0..spec.relations {
        let head_concept = r % spec.concepts;
        let tail_concept = (head_concept + 1 + rng.gen_range(0..spec.concepts - 1)) % spec.concepts;
        let jitter = unit(&mut rng, spec.spread);
        let shift: Vec<f64> = centers[tail_concept]
            .iter()
            .zip(&centers[head_concept])
            .zip(jitter)
            .map(|((b, a), j)| b - a + j)
            .collect();
        let fanout = (1 + r % spec.max_fanout.max(1)).min(m);
        for j in 0..m {
            if !rng.gen_bool(spec.link_probability) {
                continue;
            }
            let head = head_concept * m + j;
            let target: Vec<f64> = points[head].iter().zip(&shift).map(|(x, s)| x + s).collect();
            let mut tails: Vec<usize> = (tail_concept * m..(tail_concept + 1) * m).collect();
            tails.sort_by(|&a, &b| {
                sq_dist(&points[a], &target)
                    .total_cmp(&sq_dist(&points[b], &target))
                    .then(a.cmp(&b))
            });
            for &tail in &tails[..fanout] {
                triples.push((head, r, tail));
            }
        }
    }
    triples.shuffle(&mut rng);

    let n = triples.len();
    let n_valid = (n as f64 * spec.valid_fraction).round() as usize;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let held: Vec<(usize, usize, usize)> = triples[..n_valid + n_test].to_vec();
    let train: Vec<(usize, usize, usize)> = triples[n_valid + n_test..].to_vec();
    let seen_entity: std::collections::HashSet<usize> =
        train.iter().flat_map(|&(h, _, t)| [h, t]).collect();
    let seen_relation: std::collections::HashSet<usize> = train.iter().map(|&(_, r, _)| r).collect();
    let (valid, test): (Vec<_>, Vec<_>) = held
        .into_iter()
        .filter(|&(h, r, t)| seen_entity.contains(&h) && seen_entity.contains(&t) && seen_relation.contains(&r))
        .enumerate()
        .partition(|&(i, _)| i < n_valid);
    let raw = |(h, r, t): (usize, usize, usize)| RawTriple::new(label(h), relation_label(r), label(t));

    RawDataset {
        train: train.into_iter().map(raw).collect(),
        valid: valid.into_iter().map(|(_, t)| raw(t)).collect(),
        test: test.into_iter().map(|(_, t)| raw(t)).collect(),
        concepts: (0..spec.concepts * m)
            .map(|g| RawConcept::new(label(g), concept_label(g / m)))
            .collect(),
    }
}
