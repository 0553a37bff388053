//! Complex-relation categories (1-1, 1-N, N-1, N-N) from per-relation
//! heads-per-tail and tails-per-head averages.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{EntityId, KnowledgeGraph, RelationId, Side};

pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationCategory {
    OneToOne,
    OneToN,
    NToOne,
    NToN,
}

impl RelationCategory {
    pub fn classify(hpt: f64, tph: f64, threshold: f64) -> Self {
        match (hpt < threshold, tph < threshold) {
            (true, true) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToN,
            (false, true) => RelationCategory::NToOne,
            (false, false) => RelationCategory::NToN,
        }
    }

    /// Whether the entity on `side` is unique given the relation and the
    /// other entity (the "1" end of the category).
    pub fn is_unique(self, side: Side) -> bool {
        use RelationCategory::*;
        match side {
            Side::Head => matches!(self, OneToOne | OneToN),
            Side::Tail => matches!(self, OneToOne | NToOne),
        }
    }

    pub fn mirrored(self) -> Self {
        use RelationCategory::*;
        match self {
            OneToN => NToOne,
            NToOne => OneToN,
            other => other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::OneToN => "1-N",
            RelationCategory::NToOne => "N-1",
            RelationCategory::NToN => "N-N",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationProfile {
    pub relation: RelationId,
    /// Average heads per distinct `(relation, tail)`.
    pub hpt: f64,
    /// Average tails per distinct `(relation, head)`.
    pub tph: f64,
    pub category: RelationCategory,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationProfiles {
    profiles: BTreeMap<RelationId, RelationProfile>,
    threshold: f64,
}

impl RelationProfiles {
    pub fn get(&self, r: RelationId) -> Option<&RelationProfile> {
        self.profiles.get(&r)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationProfile> {
        self.profiles.values()
    }

    /// `relation<TAB>hpt<TAB>tph<TAB>category`, ascending relation id.
    pub fn to_tsv(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::new();
        for p in self.iter() {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}",
                kg.relation_label(p.relation),
                p.hpt,
                p.tph,
                p.category
            );
        }
        out
    }
}

/// Profiles every relation with at least one train triple.
pub fn profile_relations(kg: &KnowledgeGraph, threshold: f64) -> RelationProfiles {
    #[derive(Default)]
    struct Counts {
        triples: usize,
        heads: HashSet<EntityId>,
        tails: HashSet<EntityId>,
    }
    let mut counts: BTreeMap<RelationId, Counts> = BTreeMap::new();
    for t in kg.train() {
        let c = counts.entry(t.relation).or_default();
        c.triples += 1;
        c.heads.insert(t.head);
        c.tails.insert(t.tail);
    }
    let profiles = counts
        .into_iter()
        .map(|(relation, c)| {
            let n = c.triples as f64;
            let hpt = n / c.tails.len() as f64;
            let tph = n / c.heads.len() as f64;
            (
                relation,
                RelationProfile {
                    relation,
                    hpt,
                    tph,
                    category: RelationCategory::classify(hpt, tph, threshold),
                },
            )
        })
        .collect();
    RelationProfiles { profiles, threshold }
}
