//! Library outputs against brute-force recomputation on toy graphs.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{oracle_energy, oracle_metrics, scratch_softmax, toy_dataset, Missing, Oracle};
use kgc_core::commonsense::build_commonsense;
use kgc_core::dataset::validate;
use kgc_core::eval::{self, candidate_entities, explain, rank_query, LinkQuery, Metrics, PredictionMode};
use kgc_core::graph::{build_graph, EntityId, KnowledgeGraph, RawConcept, RawDataset, RawTriple, RelationId, Side, Triple};
use kgc_core::model::{init_params, ModelKind};
use kgc_core::profile::profile_relations;
use kgc_core::sampler::{NegativeBatch, NegativeSampler, SamplerConfig, Strategy, WeightedNegative};
use kgc_core::trainer::loss;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn side_of(m: Missing) -> Side {
    match m {
        Missing::Head => Side::Head,
        Missing::Tail => Side::Tail,
    }
}

fn labels(kg: &KnowledgeGraph, es: &[EntityId]) -> Vec<String> {
    es.iter().map(|&e| kg.entity_label(e).to_string()).collect()
}

fn c1_labels(kg: &KnowledgeGraph) -> BTreeSet<common::LabelTriple> {
    build_commonsense(kg)
        .c1()
        .iter()
        .map(|ct| {
            (
                kg.concept_label(ct.head).to_string(),
                kg.relation_label(ct.relation).to_string(),
                kg.concept_label(ct.tail).to_string(),
            )
        })
        .collect()
}

#[test]
fn vocabulary_and_indexes_match_scans() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let o = Oracle::new(&raw);
    assert_eq!(kg.entities().labels(), &o.entities[..]);
    assert_eq!(kg.relations().labels(), &o.relations[..]);
    assert_eq!(kg.train().len(), o.train.len());
    for h in &o.entities {
        for r in &o.relations {
            let (he, re) = (kg.entity_id(h).unwrap(), kg.relation_id(r).unwrap());
            let scan: Vec<String> = o
                .entities
                .iter()
                .filter(|t| o.train.contains(&(h.clone(), r.clone(), (*t).clone())))
                .cloned()
                .collect();
            assert_eq!(labels(&kg, kg.train_tails(he, re)), scan);
            let scan: Vec<String> = o
                .entities
                .iter()
                .filter(|t| o.all_true.contains(&(h.clone(), r.clone(), (*t).clone())))
                .cloned()
                .collect();
            assert_eq!(labels(&kg, kg.true_tails(he, re)), scan);
            let scan: Vec<String> = o
                .entities
                .iter()
                .filter(|x| o.all_true.contains(&((*x).clone(), r.clone(), h.clone())))
                .cloned()
                .collect();
            assert_eq!(labels(&kg, kg.true_heads(re, he)), scan);
            let scan: Vec<String> = o
                .entities
                .iter()
                .filter(|x| o.train.contains(&((*x).clone(), r.clone(), h.clone())))
                .cloned()
                .collect();
            assert_eq!(labels(&kg, kg.train_heads(re, he)), scan);
        }
    }
    for e in &o.entities {
        let id = kg.entity_id(e).unwrap();
        let mine: BTreeSet<String> = kg
            .concepts_of(id)
            .iter()
            .map(|&c| kg.concept_label(c).to_string())
            .collect();
        assert_eq!(&mine, o.concepts_of(e), "{e}");
    }
}

#[test]
fn commonsense_matches_nested_loops() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let o = Oracle::new(&raw);
    assert_eq!(c1_labels(&kg), o.c1());
    let cs = build_commonsense(&kg);
    let mine: BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> = cs
        .c2()
        .iter()
        .map(|(&r, rc)| {
            let names = |s: &BTreeSet<kgc_core::graph::ConceptId>| {
                s.iter().map(|&c| kg.concept_label(c).to_string()).collect()
            };
            (
                kg.relation_label(r).to_string(),
                (names(&rc.head_concepts), names(&rc.tail_concepts)),
            )
        })
        .collect();
    assert_eq!(mine, o.c2());
}

#[test]
fn profiles_match_grouped_counts() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let o = Oracle::new(&raw);
    for threshold in [1.0, 1.5, 2.0] {
        let profiles = profile_relations(&kg, threshold);
        let expected = o.profiles(threshold);
        assert_eq!(profiles.len(), expected.len());
        for p in profiles.iter() {
            let e = &expected[kg.relation_label(p.relation)];
            assert_eq!((p.hpt, p.tph, p.category.label()), (e.hpt, e.tph, e.category));
        }
    }
}

#[test]
fn candidate_partitions_match_scan_of_c1() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let cs = build_commonsense(&kg);
    let o = Oracle::new(&raw);
    let mut fallbacks = 0;
    for a in &o.entities {
        for r in &o.relations {
            for m in [Missing::Head, Missing::Tail] {
                let q = LinkQuery::new(kg.entity_id(a).unwrap(), kg.relation_id(r).unwrap(), side_of(m));
                let set = candidate_entities(q, &cs, &kg);
                let (ins, outs) = o.partition(a, r, m);
                assert_eq!(labels(&kg, &set.in_set), ins, "{a} {r} {m:?}");
                assert_eq!(labels(&kg, &set.out_set), outs);
                let answer: BTreeSet<String> = set
                    .answer_concepts
                    .iter()
                    .map(|&c| kg.concept_label(c).to_string())
                    .collect();
                assert_eq!(answer, o.answer_concepts(a, r, m));
                fallbacks += set.used_fallback as usize;
            }
        }
    }
    // some queries must exercise the fallback and some must not
    assert!(fallbacks > 0 && fallbacks < 2 * o.entities.len() * o.relations.len());
}

#[test]
fn ranks_and_metrics_match_oracle() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let cs = build_commonsense(&kg);
    let o = Oracle::new(&raw);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in ModelKind::ALL {
        let params = init_params(kind, kg.num_entities(), kg.num_relations(), 8, 2.0, 3);
        for _ in 0..30 {
            let t = kg.train()[rng.gen_range(0..kg.train().len())];
            let m = if rng.gen_bool(0.5) { Missing::Tail } else { Missing::Head };
            let (h, r, tl) = kg.label_triple(t);
            let (anchor, gold) = match m {
                Missing::Tail => (h, tl),
                Missing::Head => (tl, h),
            };
            for (mode, mv) in [(PredictionMode::RawFactOnly, false), (PredictionMode::MultiView, true)] {
                let got = rank_query(LinkQuery::from_triple(t, side_of(m)), t.entity(side_of(m)), &params, &cs, &kg, mode).unwrap();
                assert_eq!(got.gold_rank, o.rank(&params, anchor, r, m, gold, mv), "{kind} {h} {r} {tl} {m:?} {mode}");
            }
        }
        for mode in [PredictionMode::RawFactOnly, PredictionMode::MultiView] {
            let report = eval::evaluate(kg.test(), &params, &cs, &kg, mode).unwrap();
            let mut ranks = Vec::new();
            for &t in kg.test() {
                let (h, r, tl) = kg.label_triple(t);
                let mv = mode == PredictionMode::MultiView;
                ranks.push(o.rank(&params, h, r, Missing::Tail, tl, mv));
                ranks.push(o.rank(&params, tl, r, Missing::Head, h, mv));
            }
            let mine: Vec<usize> = report.results.iter().map(|r| r.gold_rank).collect();
            assert_eq!(mine, ranks);
            let m = report.metrics;
            assert_eq!([m.mr, m.mrr, m.hits1, m.hits3, m.hits10], oracle_metrics(&ranks));
        }
    }
}

#[test]
fn energies_match_formulas() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    for kind in ModelKind::ALL {
        let params = init_params(kind, kg.num_entities(), kg.num_relations(), 4, 1.0, 9);
        for h in 0..kg.num_entities() {
            for r in 0..kg.num_relations() {
                for t in [0, h / 2, kg.num_entities() - 1] {
                    let got = params.score(Triple::new(EntityId(h as u32), RelationId(r as u32), EntityId(t as u32)));
                    let want = oracle_energy(&params, h, r, t);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{kind}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn loss_matches_direct_evaluation() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in ModelKind::ALL {
        let params = init_params(kind, kg.num_entities(), kg.num_relations(), 6, 3.0, 1);
        for _ in 0..20 {
            let pos = kg.train()[rng.gen_range(0..kg.train().len())];
            let gamma = rng.gen_range(0.5..6.0);
            let mut negs = Vec::new();
            for _ in 0..4 {
                let side = if rng.gen_bool(0.5) { Side::Head } else { Side::Tail };
                negs.push(WeightedNegative {
                    triple: pos.with_entity(side, EntityId(rng.gen_range(0..kg.num_entities() as u32))),
                    weight: rng.gen_range(0.0..1.0),
                });
            }
            let (head_corrupted, tail_corrupted) = negs.split_at(2);
            let batch = NegativeBatch {
                positive: pos,
                head_corrupted: head_corrupted.to_vec(),
                tail_corrupted: tail_corrupted.to_vec(),
                n: 2,
            };
            let e = |t: Triple| oracle_energy(&params, t.head.index(), t.relation.index(), t.tail.index());
            let sp = |x: f64| (1.0 + x.exp()).ln();
            let want = sp(e(pos) - gamma)
                + negs
                    .iter()
                    .map(|n| 0.5 * n.weight * sp(gamma - e(n.triple)))
                    .sum::<f64>();
            let got = loss(pos, &batch, &params, gamma);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn corruption_pools_match_set_union_minus_exclusions() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let cs = build_commonsense(&kg);
    let profiles = profile_relations(&kg, 1.5);
    let o = Oracle::new(&raw);
    let c2 = o.c2();
    let oracle_profiles = o.profiles(1.5);
    let cfg = SamplerConfig {
        strategy: Strategy::Cans,
        ..Default::default()
    };
    let sampler = NegativeSampler::new(&kg, &cs, &profiles, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (h, r, t) in &o.train {
        let pos = Triple::new(kg.entity_id(h).unwrap(), kg.relation_id(r).unwrap(), kg.entity_id(t).unwrap());
        let category = oracle_profiles[r].category;
        for side in Side::BOTH {
            let unique = match side {
                Side::Head => category == "1-1" || category == "1-N",
                Side::Tail => category == "1-1" || category == "N-1",
            };
            let own = match side {
                Side::Head => h,
                Side::Tail => t,
            };
            let concepts: BTreeSet<String> = if unique {
                o.concepts_of(own).clone()
            } else {
                match side {
                    Side::Head => c2[r].0.clone(),
                    Side::Tail => c2[r].1.clone(),
                }
            };
            let expected: BTreeSet<String> = concepts
                .iter()
                .flat_map(|c| o.members(c))
                .filter(|e| e != own)
                .filter(|e| {
                    let cand = match side {
                        Side::Head => (e.clone(), r.clone(), t.clone()),
                        Side::Tail => (h.clone(), r.clone(), e.clone()),
                    };
                    !o.train.contains(&cand)
                })
                .collect();
            let chosen = sampler.concepts_for(pos, side);
            let exact = sampler.corruption_pool(chosen.as_ref(), pos, side, expected.len().max(1), &mut rng);
            if expected.is_empty() {
                assert!(exact.used_fallback);
                continue;
            }
            let got: BTreeSet<String> = labels(&kg, &exact.entities).into_iter().collect();
            assert_eq!(got, expected, "{h} {r} {t} {side}");
            // a larger pool keeps every candidate and pads with other entities
            let padded = sampler.corruption_pool(chosen.as_ref(), pos, side, expected.len() + 3, &mut rng);
            let got: BTreeSet<String> = labels(&kg, &padded.entities).into_iter().collect();
            assert!(got.is_superset(&expected));
            assert!(!padded.used_fallback);
        }
    }
}

#[test]
fn explanation_annotations_are_members_of_c1() {
    let raw = toy_dataset();
    let kg = build_graph(&raw).unwrap();
    let cs = build_commonsense(&kg);
    let o = Oracle::new(&raw);
    let c1 = o.c1();
    let params = init_params(ModelKind::TransE, kg.num_entities(), kg.num_relations(), 8, 2.0, 5);
    for &t in kg.test().iter().chain(kg.valid()) {
        for side in Side::BOTH {
            let q = LinkQuery::from_triple(t, side);
            let ex = explain(q, &params, &cs, &kg, 5).unwrap();
            for e in &ex.top_k {
                for ct in &e.supporting {
                    let l = (
                        kg.concept_label(ct.head).to_string(),
                        kg.relation_label(ct.relation).to_string(),
                        kg.concept_label(ct.tail).to_string(),
                    );
                    assert!(c1.contains(&l), "{l:?}");
                    assert_eq!(ct.relation, q.relation);
                }
                let anchor = kg.entity_label(q.anchor);
                let (ins, _) = o.partition(anchor, kg.relation_label(q.relation), match side {
                    Side::Head => Missing::Head,
                    Side::Tail => Missing::Tail,
                });
                let inside = ins.iter().any(|x| x == kg.entity_label(e.entity));
                assert_eq!(e.in_candidate_set, inside && !ex.used_fallback);
                assert_eq!(!e.supporting.is_empty(), e.in_candidate_set);
            }
        }
    }
}

#[test]
fn validation_counts_match_recount() {
    let mut raw = toy_dataset();
    raw.valid.push(raw.valid[0].clone());
    raw.test.push(RawTriple::new("loner", "unseen", "c00_e001"));
    raw.test.push(RawTriple::new("loner", "unseen", "c00_e001"));
    let kg = build_graph(&raw).unwrap();
    let o = Oracle::new(&raw);
    let report = validate(&raw, &kg);
    assert_eq!(report.duplicate_train, Oracle::duplicates(&raw.train));
    assert_eq!(report.duplicate_valid, Oracle::duplicates(&raw.valid));
    assert_eq!(report.duplicate_test, Oracle::duplicates(&raw.test));
    assert_eq!(report.duplicate_test, 1);
    assert_eq!(report.sentinel_entities, o.sentinel_entities());
    let train_relations: BTreeSet<&str> = raw.train.iter().map(|t| t.relation.as_str()).collect();
    let missing: BTreeSet<String> = raw
        .test
        .iter()
        .filter(|t| !train_relations.contains(t.relation.as_str()))
        .map(|t| t.relation.clone())
        .collect();
    assert_eq!(report.test_relations_missing_from_train, missing.into_iter().collect::<Vec<_>>());
    assert_eq!(report.stats.train, o.train.len());
    assert_eq!(report.stats.entities, o.entities.len());
}

#[test]
fn metrics_of_hand_ranks() {
    let m = Metrics::from_ranks(&[1, 2, 4, 20]);
    assert_eq!(m.mr, 6.75);
    assert_eq!(m.mrr, (1.0 + 0.5 + 0.25 + 0.05) / 4.0);
    assert_eq!((m.hits1, m.hits3, m.hits10), (0.25, 0.5, 0.75));
}

#[test]
fn softmax_matches_scratch() {
    let p = kgc_core::sampler::softmax(&[2.0, 1.0, 0.0], 1.0);
    let s = scratch_softmax(&[2.0, 1.0, 0.0], 1.0);
    for (a, b) in p.iter().zip(&s) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in p.iter().zip([0.6652, 0.2447, 0.0900]) {
        assert!((a - b).abs() < 5e-5);
    }
}

fn random_raw(triples: &[(u8, u8, u8)], concepts: &[(u8, u8)]) -> RawDataset {
    RawDataset {
        train: triples
            .iter()
            .map(|&(h, r, t)| RawTriple::new(format!("e{h}"), format!("r{r}"), format!("e{t}")))
            .collect(),
        concepts: concepts
            .iter()
            .map(|&(e, c)| RawConcept::new(format!("e{e}"), format!("k{c}")))
            .collect(),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_agree_with_oracle(
        triples in prop::collection::vec((0..12u8, 0..3u8, 0..12u8), 1..40),
        concepts in prop::collection::vec((0..12u8, 0..4u8), 0..24),
    ) {
        let raw = random_raw(&triples, &concepts);
        let kg = build_graph(&raw).unwrap();
        let o = Oracle::new(&raw);
        prop_assert_eq!(c1_labels(&kg), o.c1());
        let cs = build_commonsense(&kg);
        for a in &o.entities {
            for r in &o.relations {
                for m in [Missing::Head, Missing::Tail] {
                    let q = LinkQuery::new(kg.entity_id(a).unwrap(), kg.relation_id(r).unwrap(), side_of(m));
                    let set = candidate_entities(q, &cs, &kg);
                    prop_assert_eq!(labels(&kg, &set.in_set), o.partition(a, r, m).0);
                }
            }
        }
        let profiles = profile_relations(&kg, 1.5);
        let expected = o.profiles(1.5);
        for p in profiles.iter() {
            let e = &expected[kg.relation_label(p.relation)];
            prop_assert_eq!((p.hpt, p.tph, p.category.label()), (e.hpt, e.tph, e.category));
        }
    }

    #[test]
    fn random_ranks_agree_with_oracle(
        triples in prop::collection::vec((0..10u8, 0..2u8, 0..10u8), 2..30),
        concepts in prop::collection::vec((0..10u8, 0..3u8), 0..15),
        seed in 0..1000u64,
    ) {
        let raw = random_raw(&triples, &concepts);
        let kg = build_graph(&raw).unwrap();
        let cs = build_commonsense(&kg);
        let o = Oracle::new(&raw);
        let params = init_params(ModelKind::DistMult, kg.num_entities(), kg.num_relations(), 3, 1.0, seed);
        for &t in kg.train() {
            let (h, r, tl) = kg.label_triple(t);
            for (mode, mv) in [(PredictionMode::RawFactOnly, false), (PredictionMode::MultiView, true)] {
                let got = rank_query(LinkQuery::from_triple(t, Side::Tail), t.tail, &params, &cs, &kg, mode).unwrap();
                prop_assert_eq!(got.gold_rank, o.rank(&params, h, r, Missing::Tail, tl, mv));
                let got = rank_query(LinkQuery::from_triple(t, Side::Head), t.head, &params, &cs, &kg, mode).unwrap();
                prop_assert_eq!(got.gold_rank, o.rank(&params, tl, r, Missing::Head, h, mv));
            }
        }
    }
}
