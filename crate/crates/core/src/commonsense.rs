//! Concept-level commonsense abstracted from factual triples.
//!
//! Every train triple `(h, r, t)` is lifted to the concept triples
//! `concepts(h) × {r} × concepts(t)`. The deduplicated union is the
//! individual form; grouping it by relation gives the set form, one head
//! concept set and one tail concept set per relation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::graph::{ConceptId, KnowledgeGraph, RelationId, Side, Triple};

/// One `(head concept, relation, tail concept)` entry of the individual form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptTriple {
    pub head: ConceptId,
    pub relation: RelationId,
    pub tail: ConceptId,
}

/// Set-form entry for one relation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationConcepts {
    pub head_concepts: BTreeSet<ConceptId>,
    pub tail_concepts: BTreeSet<ConceptId>,
}

impl RelationConcepts {
    pub fn side(&self, side: Side) -> &BTreeSet<ConceptId> {
        match side {
            Side::Head => &self.head_concepts,
            Side::Tail => &self.tail_concepts,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommonsenseStore {
    c1: BTreeSet<ConceptTriple>,
    c2: BTreeMap<RelationId, RelationConcepts>,
    tails_by_head: BTreeMap<(ConceptId, RelationId), BTreeSet<ConceptId>>,
    heads_by_tail: BTreeMap<(RelationId, ConceptId), BTreeSet<ConceptId>>,
}

/// Lifts one fact to concept level.
pub fn abstract_triple(t: Triple, kg: &KnowledgeGraph) -> Vec<ConceptTriple> {
    let tails = kg.concepts_of(t.tail);
    kg.concepts_of(t.head)
        .iter()
        .flat_map(|&head| {
            tails.iter().map(move |&tail| ConceptTriple {
                head,
                relation: t.relation,
                tail,
            })
        })
        .collect()
}

/// Builds both commonsense forms from the train split.
pub fn build_commonsense(kg: &KnowledgeGraph) -> CommonsenseStore {
    CommonsenseStore::from_triples(kg.train().iter().flat_map(|&t| abstract_triple(t, kg)))
}

impl CommonsenseStore {
    pub fn from_triples(triples: impl IntoIterator<Item = ConceptTriple>) -> Self {
        let mut store = CommonsenseStore::default();
        for ct in triples {
            if !store.c1.insert(ct) {
                continue;
            }
            let entry = store.c2.entry(ct.relation).or_default();
            entry.head_concepts.insert(ct.head);
            entry.tail_concepts.insert(ct.tail);
            store
                .tails_by_head
                .entry((ct.head, ct.relation))
                .or_default()
                .insert(ct.tail);
            store
                .heads_by_tail
                .entry((ct.relation, ct.tail))
                .or_default()
                .insert(ct.head);
        }
        store
    }

    pub fn c1(&self) -> &BTreeSet<ConceptTriple> {
        &self.c1
    }

    pub fn c2(&self) -> &BTreeMap<RelationId, RelationConcepts> {
        &self.c2
    }

    pub fn relation_concepts(&self, r: RelationId) -> Option<&RelationConcepts> {
        self.c2.get(&r)
    }

    pub fn contains(&self, ct: ConceptTriple) -> bool {
        self.c1.contains(&ct)
    }

    /// Tail concepts seen with `(head_concept, relation, ·)`.
    pub fn tails_for(&self, head_concept: ConceptId, relation: RelationId) -> Option<&BTreeSet<ConceptId>> {
        self.tails_by_head.get(&(head_concept, relation))
    }

    /// Head concepts seen with `(·, relation, tail_concept)`.
    pub fn heads_for(&self, relation: RelationId, tail_concept: ConceptId) -> Option<&BTreeSet<ConceptId>> {
        self.heads_by_tail.get(&(relation, tail_concept))
    }

    /// Concepts admissible for the `missing` slot of a query whose known
    /// entity has `anchor_concepts`. For a tail query this is
    /// `{c_t | (c_h, r, c_t) ∈ C1, c_h ∈ anchor_concepts}`; head queries use
    /// the mirrored rule. Empty when the combination was never observed.
    pub fn answer_concepts(
        &self,
        anchor_concepts: &[ConceptId],
        relation: RelationId,
        missing: Side,
    ) -> BTreeSet<ConceptId> {
        let mut out = BTreeSet::new();
        for &c in anchor_concepts {
            let found = match missing {
                Side::Tail => self.tails_for(c, relation),
                Side::Head => self.heads_for(relation, c),
            };
            if let Some(set) = found {
                out.extend(set.iter().copied());
            }
        }
        out
    }

    /// Concept triples of `relation` linking `anchor` concepts to `answer`
    /// concepts, as the admitting evidence for one predicted entity.
    pub fn supporting_triples(
        &self,
        anchor_concepts: &[ConceptId],
        relation: RelationId,
        answer_concepts: &[ConceptId],
        missing: Side,
    ) -> Vec<ConceptTriple> {
        let mut out = Vec::new();
        for &a in anchor_concepts {
            for &b in answer_concepts {
                let ct = match missing {
                    Side::Tail => ConceptTriple { head: a, relation, tail: b },
                    Side::Head => ConceptTriple { head: b, relation, tail: a },
                };
                if self.c1.contains(&ct) {
                    out.push(ct);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// `head_concept<TAB>relation<TAB>tail_concept` per line, sorted by id.
    pub fn c1_tsv(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::new();
        for ct in &self.c1 {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                kg.concept_label(ct.head),
                kg.relation_label(ct.relation),
                kg.concept_label(ct.tail)
            );
        }
        out
    }

    /// One JSON object per relation and line:
    /// `{"relation":..,"head_concepts":[..],"tail_concepts":[..]}`.
    pub fn c2_text(&self, kg: &KnowledgeGraph) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            relation: &'a str,
            head_concepts: Vec<&'a str>,
            tail_concepts: Vec<&'a str>,
        }
        let mut out = String::new();
        for (&r, rc) in &self.c2 {
            let line = Line {
                relation: kg.relation_label(r),
                head_concepts: rc.head_concepts.iter().map(|&c| kg.concept_label(c)).collect(),
                tail_concepts: rc.tail_concepts.iter().map(|&c| kg.concept_label(c)).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("plain strings serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, RawConcept, RawDataset, RawTriple};
    use proptest::prelude::*;

    fn kg(train: &[(&str, &str, &str)], concepts: &[(&str, &str)]) -> KnowledgeGraph {
        build_graph(&RawDataset {
            train: train.iter().map(|&(h, r, t)| RawTriple::new(h, r, t)).collect(),
            concepts: concepts.iter().map(|&(e, c)| RawConcept::new(e, c)).collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn nationality_example() {
        let g = kg(
            &[("david", "nationality", "usa")],
            &[("david", "person"), ("usa", "country")],
        );
        let t = g.train()[0];
        let out = abstract_triple(t, &g);
        assert_eq!(
            out,
            vec![ConceptTriple {
                head: g.concept_id("person").unwrap(),
                relation: g.relation_id("nationality").unwrap(),
                tail: g.concept_id("country").unwrap(),
            }]
        );
        let cs = build_commonsense(&g);
        assert_eq!(cs.c1().len(), 1);
        assert_eq!(cs.c2().len(), 1);
    }

    #[test]
    fn product_cardinality() {
        let g = kg(
            &[("a", "r", "b")],
            &[("a", "x1"), ("a", "x2"), ("b", "y1"), ("b", "y2"), ("b", "y3")],
        );
        assert_eq!(abstract_triple(g.train()[0], &g).len(), 6);
    }

    #[test]
    fn located_in_head_concepts() {
        let g = kg(
            &[
                ("atlanta", "locatedin", "georgia"),
                ("fulton", "locatedin", "georgia"),
                ("jekyll", "locatedin", "georgia"),
                ("nashville", "locatedin", "tennessee"),
            ],
            &[
                ("atlanta", "city"),
                ("nashville", "city"),
                ("fulton", "county"),
                ("jekyll", "island"),
                ("georgia", "stateprovince"),
                ("tennessee", "stateprovince"),
            ],
        );
        let cs = build_commonsense(&g);
        let rc = cs.relation_concepts(g.relation_id("locatedin").unwrap()).unwrap();
        let heads: Vec<&str> = rc.head_concepts.iter().map(|&c| g.concept_label(c)).collect();
        assert_eq!(heads, vec!["city", "county", "island"]);
        let tails: Vec<&str> = rc.tail_concepts.iter().map(|&c| g.concept_label(c)).collect();
        assert_eq!(tails, vec!["stateprovince"]);
        assert_eq!(cs.c1().len(), 3);
    }

    #[test]
    fn answer_concepts_unseen_is_empty() {
        let g = kg(&[("a", "r", "b")], &[("a", "x"), ("b", "y")]);
        let cs = build_commonsense(&g);
        let y = g.concept_id("y").unwrap();
        let r = g.relation_id("r").unwrap();
        assert!(cs.answer_concepts(&[y], r, Side::Tail).is_empty());
        let x = g.concept_id("x").unwrap();
        assert_eq!(cs.answer_concepts(&[x], r, Side::Tail), BTreeSet::from([y]));
        assert_eq!(cs.answer_concepts(&[y], r, Side::Head), BTreeSet::from([x]));
    }

    #[test]
    fn exports_are_label_based() {
        let g = kg(&[("a", "r", "b")], &[("a", "x"), ("b", "y")]);
        let cs = build_commonsense(&g);
        assert_eq!(cs.c1_tsv(&g), "x\tr\ty\n");
        assert_eq!(
            cs.c2_text(&g),
            "{\"relation\":\"r\",\"head_concepts\":[\"x\"],\"tail_concepts\":[\"y\"]}\n"
        );
    }

    fn arb_dataset() -> impl Strategy<Value = RawDataset> {
        let triple = (0..8u8, 0..3u8, 0..8u8);
        let concept = (0..8u8, 0..4u8);
        (
            prop::collection::vec(triple, 1..30),
            prop::collection::vec(concept, 0..16),
        )
            .prop_map(|(ts, cs)| RawDataset {
                train: ts
                    .into_iter()
                    .map(|(h, r, t)| RawTriple::new(format!("e{h}"), format!("r{r}"), format!("e{t}")))
                    .collect(),
                concepts: cs
                    .into_iter()
                    .map(|(e, c)| RawConcept::new(format!("e{e}"), format!("c{c}")))
                    .collect(),
                ..Default::default()
            })
    }

    fn labelled_c1(g: &KnowledgeGraph, cs: &CommonsenseStore) -> BTreeSet<(String, String, String)> {
        cs.c1()
            .iter()
            .map(|ct| {
                (
                    g.concept_label(ct.head).to_string(),
                    g.relation_label(ct.relation).to_string(),
                    g.concept_label(ct.tail).to_string(),
                )
            })
            .collect()
    }

    proptest! {
        #[test]
        fn c1_c2_cross_invariants(raw in arb_dataset()) {
            let g = build_graph(&raw).unwrap();
            let cs = build_commonsense(&g);
            for ct in cs.c1() {
                let rc = &cs.c2()[&ct.relation];
                prop_assert!(rc.head_concepts.contains(&ct.head));
                prop_assert!(rc.tail_concepts.contains(&ct.tail));
            }
            for (r, rc) in cs.c2() {
                let heads: BTreeSet<_> = cs.c1().iter().filter(|c| c.relation == *r).map(|c| c.head).collect();
                let tails: BTreeSet<_> = cs.c1().iter().filter(|c| c.relation == *r).map(|c| c.tail).collect();
                prop_assert_eq!(&rc.head_concepts, &heads);
                prop_assert_eq!(&rc.tail_concepts, &tails);
            }
            prop_assert_eq!(build_commonsense(&g), cs);
        }

        #[test]
        fn adding_a_triple_never_removes_c1(raw in arb_dataset(), extra in (0..8u8, 0..3u8, 0..8u8)) {
            let g = build_graph(&raw).unwrap();
            let before = labelled_c1(&g, &build_commonsense(&g));
            let mut grown = raw.clone();
            grown.train.push(RawTriple::new(format!("e{}", extra.0), format!("r{}", extra.1), format!("e{}", extra.2)));
            let g2 = build_graph(&grown).unwrap();
            let after = labelled_c1(&g2, &build_commonsense(&g2));
            prop_assert!(before.is_subset(&after), "{:?} not within {:?}", before, after);
        }
    }
}
