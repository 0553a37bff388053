//! Toy fixtures and brute-force oracles shared by the integration tests.
//!
//! The oracles work on string labels straight from the raw records and
//! recompute everything by linear scans and nested loops, without touching
//! the library's indexes.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use kgc_core::graph::{RawConcept, RawDataset, RawTriple, SENTINEL_CONCEPT};
use kgc_core::model::{ModelKind, ModelParams};
use kgc_core::synthetic::{planted_dataset, SyntheticSpec};

pub type LabelTriple = (String, String, String);

/// Planted toy KG with a few irregularities: two entities carry a second
/// concept, one entity has no concept line, one concept line is repeated and
/// one train triple is duplicated.
pub fn toy_dataset() -> RawDataset {
    let mut raw = planted_dataset(&SyntheticSpec::tiny(7));
    raw.concepts.push(RawConcept::new("c00_e000", "c01"));
    raw.concepts.push(RawConcept::new("c02_e003", "c03"));
    raw.concepts.push(RawConcept::new("c02_e003", "c03"));
    raw.train.push(RawTriple::new("loner", "r00", "c01_e001"));
    raw.train.push(RawTriple::new("c01_e004", "r05", "loner"));
    let dup = raw.train[0].clone();
    raw.train.push(dup);
    raw
}

fn label(t: &RawTriple) -> LabelTriple {
    (t.head.clone(), t.relation.clone(), t.tail.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Missing {
    Head,
    Tail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleProfile {
    pub hpt: f64,
    pub tph: f64,
    pub category: &'static str,
}

/// Everything recomputed from the raw records.
pub struct Oracle {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub train: Vec<LabelTriple>,
    pub all_true: HashSet<LabelTriple>,
    pub concepts: BTreeMap<String, BTreeSet<String>>,
}

impl Oracle {
    pub fn new(raw: &RawDataset) -> Self {
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in raw.train.iter().chain(&raw.valid).chain(&raw.test) {
            entities.insert(t.head.clone());
            entities.insert(t.tail.clone());
            relations.insert(t.relation.clone());
        }
        for c in &raw.concepts {
            entities.insert(c.entity.clone());
        }
        let mut train = Vec::new();
        for t in &raw.train {
            let l = label(t);
            if !train.contains(&l) {
                train.push(l);
            }
        }
        let all_true = raw
            .train
            .iter()
            .chain(&raw.valid)
            .chain(&raw.test)
            .map(label)
            .collect();
        let mut concepts: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for e in &entities {
            let mine: BTreeSet<String> = raw
                .concepts
                .iter()
                .filter(|c| &c.entity == e)
                .map(|c| c.concept.clone())
                .collect();
            let mine = if mine.is_empty() {
                BTreeSet::from([SENTINEL_CONCEPT.to_string()])
            } else {
                mine
            };
            concepts.insert(e.clone(), mine);
        }
        Oracle {
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
            train,
            all_true,
            concepts,
        }
    }

    pub fn entity_index(&self, label: &str) -> usize {
        self.entities.iter().position(|e| e == label).expect("known entity")
    }

    pub fn relation_index(&self, label: &str) -> usize {
        self.relations.iter().position(|r| r == label).expect("known relation")
    }

    pub fn concepts_of(&self, e: &str) -> &BTreeSet<String> {
        &self.concepts[e]
    }

    pub fn members(&self, concept: &str) -> Vec<String> {
        self.entities
            .iter()
            .filter(|e| self.concepts[*e].contains(concept))
            .cloned()
            .collect()
    }

    pub fn c1(&self) -> BTreeSet<LabelTriple> {
        let mut out = BTreeSet::new();
        for (h, r, t) in &self.train {
            for ch in &self.concepts[h] {
                for ct in &self.concepts[t] {
                    out.insert((ch.clone(), r.clone(), ct.clone()));
                }
            }
        }
        out
    }

    pub fn c2(&self) -> BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> {
        let mut out: BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
        for (ch, r, ct) in self.c1() {
            let entry = out.entry(r).or_default();
            entry.0.insert(ch);
            entry.1.insert(ct);
        }
        out
    }

    pub fn profiles(&self, threshold: f64) -> BTreeMap<String, OracleProfile> {
        let mut out = BTreeMap::new();
        for r in &self.relations {
            let rows: Vec<&LabelTriple> = self.train.iter().filter(|t| &t.1 == r).collect();
            if rows.is_empty() {
                continue;
            }
            let heads: BTreeSet<&String> = rows.iter().map(|t| &t.0).collect();
            let tails: BTreeSet<&String> = rows.iter().map(|t| &t.2).collect();
            let hpt = rows.len() as f64 / tails.len() as f64;
            let tph = rows.len() as f64 / heads.len() as f64;
            let category = match (hpt >= threshold, tph >= threshold) {
                (false, false) => "1-1",
                (false, true) => "1-N",
                (true, false) => "N-1",
                (true, true) => "N-N",
            };
            out.insert(r.clone(), OracleProfile { hpt, tph, category });
        }
        out
    }

    /// Concepts admissible for the missing slot, by scanning C1.
    pub fn answer_concepts(&self, anchor: &str, relation: &str, missing: Missing) -> BTreeSet<String> {
        let anchor_concepts = &self.concepts[anchor];
        self.c1()
            .into_iter()
            .filter(|(ch, r, ct)| {
                r == relation
                    && match missing {
                        Missing::Tail => anchor_concepts.contains(ch),
                        Missing::Head => anchor_concepts.contains(ct),
                    }
            })
            .map(|(ch, _, ct)| match missing {
                Missing::Tail => ct,
                Missing::Head => ch,
            })
            .collect()
    }

    /// In-set and out-set entity labels; everything is in the in-set when
    /// no concept qualifies.
    pub fn partition(&self, anchor: &str, relation: &str, missing: Missing) -> (Vec<String>, Vec<String>) {
        let answer = self.answer_concepts(anchor, relation, missing);
        if answer.is_empty() {
            return (self.entities.clone(), Vec::new());
        }
        self.entities
            .iter()
            .cloned()
            .partition(|e| self.concepts[e].iter().any(|c| answer.contains(c)))
    }

    fn complete(anchor: &str, relation: &str, missing: Missing, e: &str) -> LabelTriple {
        match missing {
            Missing::Tail => (anchor.to_string(), relation.to_string(), e.to_string()),
            Missing::Head => (e.to_string(), relation.to_string(), anchor.to_string()),
        }
    }

    /// Filtered rank of `gold`: sort every entity, drop the other true
    /// answers, find the gold position.
    pub fn rank(
        &self,
        params: &ModelParams,
        anchor: &str,
        relation: &str,
        missing: Missing,
        gold: &str,
        multi_view: bool,
    ) -> usize {
        let (in_set, _) = self.partition(anchor, relation, missing);
        let r = self.relation_index(relation);
        let mut scored: Vec<(bool, f64, usize, &String)> = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let t = Self::complete(anchor, relation, missing, e);
                let energy = oracle_energy(
                    params,
                    self.entity_index(&t.0),
                    r,
                    self.entity_index(&t.2),
                );
                (!(multi_view && in_set.contains(e)), energy, i, e)
            })
            .collect();
        scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let kept: Vec<&String> = scored
            .into_iter()
            .filter(|&(_, _, _, e)| e == gold || !self.all_true.contains(&Self::complete(anchor, relation, missing, e)))
            .map(|(_, _, _, e)| e)
            .collect();
        kept.iter().position(|e| *e == gold).expect("gold present") + 1
    }

    /// Duplicate records in a split: total minus distinct.
    pub fn duplicates(split: &[RawTriple]) -> usize {
        let distinct: BTreeSet<LabelTriple> = split.iter().map(label).collect();
        split.len() - distinct.len()
    }

    pub fn sentinel_entities(&self) -> usize {
        self.concepts
            .values()
            .filter(|cs| cs.len() == 1 && cs.contains(SENTINEL_CONCEPT))
            .count()
    }
}

/// Energy straight from the scoring formulas, lower is more plausible.
pub fn oracle_energy(params: &ModelParams, h: usize, r: usize, t: usize) -> f64 {
    let d = params.dim();
    let eh = params.entity(kgc_core::graph::EntityId(h as u32));
    let et = params.entity(kgc_core::graph::EntityId(t as u32));
    let rr = params.relation(kgc_core::graph::RelationId(r as u32));
    let mut sum = 0.0;
    match params.kind() {
        ModelKind::TransE => {
            for i in 0..d {
                sum += (eh[i] + rr[i] - et[i]).abs();
            }
            sum
        }
        ModelKind::DistMult => {
            for i in 0..d {
                sum += eh[i] * rr[i] * et[i];
            }
            -sum
        }
        ModelKind::RotatE => {
            for i in 0..d {
                // (a + bi)(cos + i sin) - (c + di)
                let (a, b) = (eh[i], eh[d + i]);
                let (c, dd) = (et[i], et[d + i]);
                let (cos, sin) = (rr[i].cos(), rr[i].sin());
                let re = a * cos - b * sin - c;
                let im = a * sin + b * cos - dd;
                sum += (re * re + im * im).sqrt();
            }
            sum
        }
    }
}

/// MR, MRR, Hits@1, Hits@3, Hits@10 by direct averaging.
pub fn oracle_metrics(ranks: &[usize]) -> [f64; 5] {
    let n = ranks.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
    [
        mean(&|r| r as f64),
        mean(&|r| 1.0 / r as f64),
        mean(&|r| if r <= 1 { 1.0 } else { 0.0 }),
        mean(&|r| if r <= 3 { 1.0 } else { 0.0 }),
        mean(&|r| if r <= 10 { 1.0 } else { 0.0 }),
    ]
}

/// Softmax written out the textbook way, without max-shifting.
pub fn scratch_softmax(logits: &[f64], alpha: f64) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|x| (alpha * x).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
