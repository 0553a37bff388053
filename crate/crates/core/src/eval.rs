//! Multi-view link prediction and filtered ranking metrics.
//!
//! A query `(h, r, ?)` is first viewed at concept level: the tail concepts
//! seen with any concept of `h` under `r` form the candidate concepts, and
//! their member entities form the in-set. Entities are then ranked by
//! energy, in-set first and out-set after. Head queries mirror this. When
//! commonsense says nothing about the query the in-set is every entity.
//!
//! Ranks are filtered: other true entities for the query, from any split,
//! are removed before the gold entity is ranked. Ties in energy go to the
//! lower entity id.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commonsense::{CommonsenseStore, ConceptTriple};
use crate::graph::{ConceptId, EntityId, KnowledgeGraph, RelationId, Side, Triple};
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionMode {
    /// Commonsense in-set ranked before the out-set.
    #[default]
    #[serde(rename = "mvlp")]
    MultiView,
    /// One ranking over all entities.
    #[serde(rename = "raw")]
    RawFactOnly,
}

impl PredictionMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictionMode::MultiView => "mvlp",
            PredictionMode::RawFactOnly => "raw",
        }
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredictionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mvlp" | "multiview" | "multi-view" => Ok(PredictionMode::MultiView),
            "raw" | "rawfactonly" | "raw-fact-only" => Ok(PredictionMode::RawFactOnly),
            _ => Err(format!("unknown prediction mode {s:?} (expected raw or mvlp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LinkQuery {
    /// The known entity.
    pub anchor: EntityId,
    pub relation: RelationId,
    pub missing: Side,
}

impl LinkQuery {
    pub fn new(anchor: EntityId, relation: RelationId, missing: Side) -> Self {
        LinkQuery { anchor, relation, missing }
    }

    /// Query hiding `missing` of `t`.
    pub fn from_triple(t: Triple, missing: Side) -> Self {
        LinkQuery {
            anchor: t.entity(missing.opposite()),
            relation: t.relation,
            missing,
        }
    }

    /// Completes the query with `answer`.
    pub fn complete(self, answer: EntityId) -> Triple {
        match self.missing {
            Side::Tail => Triple::new(self.anchor, self.relation, answer),
            Side::Head => Triple::new(answer, self.relation, self.anchor),
        }
    }

    pub fn to_text(self, kg: &KnowledgeGraph) -> String {
        let a = kg.entity_label(self.anchor);
        let r = kg.relation_label(self.relation);
        match self.missing {
            Side::Tail => format!("({a}, {r}, ?)"),
            Side::Head => format!("(?, {r}, {a})"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("entity id {0} out of range")]
    UnknownEntity(u32),
    #[error("relation id {0} out of range")]
    UnknownRelation(u32),
    #[error("checkpoint has {params} {what} but the graph has {graph}")]
    ShapeMismatch {
        what: &'static str,
        params: usize,
        graph: usize,
    },
}

/// Partition of all entities for one query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub answer_concepts: BTreeSet<ConceptId>,
    /// Sorted by id.
    pub in_set: Vec<EntityId>,
    /// Sorted by id.
    pub out_set: Vec<EntityId>,
    /// Commonsense had no entry for the query; the in-set is every entity.
    pub used_fallback: bool,
}

/// Candidate concepts for the missing slot of `query`.
pub fn query_concepts(query: LinkQuery, cs: &CommonsenseStore, kg: &KnowledgeGraph) -> BTreeSet<ConceptId> {
    cs.answer_concepts(kg.concepts_of(query.anchor), query.relation, query.missing)
}

fn in_set_mask(answer: &BTreeSet<ConceptId>, kg: &KnowledgeGraph) -> Option<Vec<bool>> {
    if answer.is_empty() {
        return None;
    }
    let mut mask = vec![false; kg.num_entities()];
    for &c in answer {
        for &e in kg.entities_of(c) {
            mask[e.index()] = true;
        }
    }
    Some(mask)
}

pub fn candidate_entities(query: LinkQuery, cs: &CommonsenseStore, kg: &KnowledgeGraph) -> CandidateSet {
    let answer_concepts = query_concepts(query, cs, kg);
    let all = (0..kg.num_entities() as u32).map(EntityId);
    match in_set_mask(&answer_concepts, kg) {
        None => CandidateSet {
            answer_concepts,
            in_set: all.collect(),
            out_set: Vec::new(),
            used_fallback: true,
        },
        Some(mask) => {
            let (in_set, out_set) = all.partition(|e| mask[e.index()]);
            CandidateSet {
                answer_concepts,
                in_set,
                out_set,
                used_fallback: false,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankResult {
    pub query: LinkQuery,
    pub gold: EntityId,
    /// Filtered rank, starting at 1.
    pub gold_rank: usize,
    /// Rank without removing other true entities.
    pub raw_rank: usize,
    pub candidate_set_size: usize,
    pub used_fallback: bool,
}

fn check_shapes(params: &ModelParams, kg: &KnowledgeGraph) -> Result<(), EvalError> {
    if params.num_entities() != kg.num_entities() {
        return Err(EvalError::ShapeMismatch {
            what: "entities",
            params: params.num_entities(),
            graph: kg.num_entities(),
        });
    }
    if params.num_relations() != kg.num_relations() {
        return Err(EvalError::ShapeMismatch {
            what: "relations",
            params: params.num_relations(),
            graph: kg.num_relations(),
        });
    }
    Ok(())
}

fn check_query(query: LinkQuery, kg: &KnowledgeGraph) -> Result<(), EvalError> {
    if query.anchor.index() >= kg.num_entities() {
        return Err(EvalError::UnknownEntity(query.anchor.0));
    }
    if query.relation.index() >= kg.num_relations() {
        return Err(EvalError::UnknownRelation(query.relation.0));
    }
    Ok(())
}

/// Ranks `gold` for `query`.
pub fn rank_query(
    query: LinkQuery,
    gold: EntityId,
    params: &ModelParams,
    cs: &CommonsenseStore,
    kg: &KnowledgeGraph,
    mode: PredictionMode,
) -> Result<RankResult, EvalError> {
    check_shapes(params, kg)?;
    check_query(query, kg)?;
    if gold.index() >= kg.num_entities() {
        return Err(EvalError::UnknownEntity(gold.0));
    }
    Ok(rank_unchecked(query, gold, params, cs, kg, mode))
}

fn rank_unchecked(
    query: LinkQuery,
    gold: EntityId,
    params: &ModelParams,
    cs: &CommonsenseStore,
    kg: &KnowledgeGraph,
    mode: PredictionMode,
) -> RankResult {
    let energies = params.energies(query.anchor, query.relation, query.missing);
    let answer = query_concepts(query, cs, kg);
    let mask = in_set_mask(&answer, kg);
    let used_fallback = mask.is_none();
    let in_set = |e: usize| mask.as_ref().is_none_or(|m| m[e]);
    let candidate_set_size = match &mask {
        None => kg.num_entities(),
        Some(m) => m.iter().filter(|&&b| b).count(),
    };

    let gold_energy = energies[gold.index()];
    let gold_in = in_set(gold.index());
    let beats_gold = |e: usize| match energies[e].total_cmp(&gold_energy) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => e < gold.index(),
        std::cmp::Ordering::Greater => false,
    };
    // does entity `e` rank above the gold entity?
    let ahead = |e: usize| match mode {
        PredictionMode::RawFactOnly => beats_gold(e),
        PredictionMode::MultiView => match (in_set(e), gold_in) {
            (true, false) => true,
            (false, true) => false,
            _ => beats_gold(e),
        },
    };

    let mut raw_ahead = 0;
    for e in 0..energies.len() {
        if e != gold.index() && ahead(e) {
            raw_ahead += 1;
        }
    }
    let probe = query.complete(gold);
    let filtered_out = kg
        .true_entities(probe, query.missing)
        .iter()
        .filter(|&&e| e != gold && ahead(e.index()))
        .count();

    RankResult {
        query,
        gold,
        gold_rank: raw_ahead - filtered_out + 1,
        raw_rank: raw_ahead + 1,
        candidate_set_size,
        used_fallback,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let mut m = Metrics {
            count: ranks.len(),
            ..Default::default()
        };
        for &r in ranks {
            m.mr += r as f64;
            m.mrr += 1.0 / r as f64;
            m.hits1 += (r <= 1) as u8 as f64;
            m.hits3 += (r <= 3) as u8 as f64;
            m.hits10 += (r <= 10) as u8 as f64;
        }
        m.mr /= n;
        m.mrr /= n;
        m.hits1 /= n;
        m.hits3 /= n;
        m.hits10 /= n;
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    /// Tail query then head query for every triple, in input order.
    pub results: Vec<RankResult>,
}

impl EvalReport {
    pub fn fallback_count(&self) -> usize {
        self.results.iter().filter(|r| r.used_fallback).count()
    }
}

/// Thread pool capped at `workers` threads (0 = one per core).
pub fn worker_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap_or_else(|err| {
            log::warn!("could not build a {workers}-thread pool ({err}); using a single thread");
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .expect("single-thread pool")
        })
}

/// Runs `f` on a pool capped at `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    worker_pool(workers).install(f)
}

/// Filtered metrics over head and tail queries of every triple in `triples`.
pub fn evaluate(
    triples: &[Triple],
    params: &ModelParams,
    cs: &CommonsenseStore,
    kg: &KnowledgeGraph,
    mode: PredictionMode,
) -> Result<EvalReport, EvalError> {
    check_shapes(params, kg)?;
    for &t in triples {
        check_query(LinkQuery::from_triple(t, Side::Tail), kg)?;
        if t.tail.index() >= kg.num_entities() {
            return Err(EvalError::UnknownEntity(t.tail.0));
        }
    }
    let results: Vec<RankResult> = triples
        .par_iter()
        .flat_map_iter(|&t| {
            [Side::Tail, Side::Head].map(|missing| {
                rank_unchecked(LinkQuery::from_triple(t, missing), t.entity(missing), params, cs, kg, mode)
            })
        })
        .collect();
    let ranks: Vec<usize> = results.iter().map(|r| r.gold_rank).collect();
    Ok(EvalReport {
        metrics: Metrics::from_ranks(&ranks),
        results,
    })
}

/// Entities ordered as the given mode would rank them, unfiltered.
pub fn ranked_entities(
    query: LinkQuery,
    params: &ModelParams,
    cs: &CommonsenseStore,
    kg: &KnowledgeGraph,
    mode: PredictionMode,
) -> Vec<(EntityId, f64, bool)> {
    let energies = params.energies(query.anchor, query.relation, query.missing);
    let mask = in_set_mask(&query_concepts(query, cs, kg), kg);
    let mut order: Vec<(EntityId, f64, bool)> = energies
        .iter()
        .enumerate()
        .map(|(e, &en)| (EntityId(e as u32), en, mask.as_ref().is_none_or(|m| m[e])))
        .collect();
    order.sort_by(|a, b| {
        let group = match mode {
            PredictionMode::MultiView => b.2.cmp(&a.2),
            PredictionMode::RawFactOnly => std::cmp::Ordering::Equal,
        };
        group.then(a.1.total_cmp(&b.1)).then(a.0.cmp(&b.0))
    });
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainedEntity {
    pub rank: usize,
    pub entity: EntityId,
    pub energy: f64,
    pub concepts: Vec<ConceptId>,
    pub in_candidate_set: bool,
    /// Individual-form commonsense admitting this entity for the query.
    pub supporting: Vec<ConceptTriple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub query: LinkQuery,
    pub anchor_concepts: Vec<ConceptId>,
    pub answer_concepts: BTreeSet<ConceptId>,
    pub used_fallback: bool,
    pub top_k: Vec<ExplainedEntity>,
}

pub const NO_CONSTRAINT_NOTE: &str = "no commonsense constraint";

/// Top-`k` multi-view predictions annotated with their concepts and the
/// commonsense that admitted them.
pub fn explain(
    query: LinkQuery,
    params: &ModelParams,
    cs: &CommonsenseStore,
    kg: &KnowledgeGraph,
    k: usize,
) -> Result<Explanation, EvalError> {
    check_shapes(params, kg)?;
    check_query(query, kg)?;
    let anchor_concepts = kg.concepts_of(query.anchor).to_vec();
    let answer_concepts = query_concepts(query, cs, kg);
    let used_fallback = answer_concepts.is_empty();
    let top_k = ranked_entities(query, params, cs, kg, PredictionMode::MultiView)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (entity, energy, in_set))| {
            let concepts = kg.concepts_of(entity).to_vec();
            let supporting = if used_fallback {
                Vec::new()
            } else {
                cs.supporting_triples(&anchor_concepts, query.relation, &concepts, query.missing)
            };
            ExplainedEntity {
                rank: i + 1,
                entity,
                energy,
                concepts,
                in_candidate_set: in_set && !used_fallback,
                supporting,
            }
        })
        .collect();
    Ok(Explanation {
        query,
        anchor_concepts,
        answer_concepts,
        used_fallback,
        top_k,
    })
}

impl Explanation {
    /// Structured text: a header block, then one record per entity.
    pub fn to_text(&self, kg: &KnowledgeGraph) -> String {
        let names = |cs: &mut dyn Iterator<Item = ConceptId>| -> String {
            cs.map(|c| kg.concept_label(c)).collect::<Vec<_>>().join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "query\t{}", self.query.to_text(kg));
        let _ = writeln!(out, "anchor_concepts\t{}", names(&mut self.anchor_concepts.iter().copied()));
        if self.used_fallback {
            let _ = writeln!(out, "candidate_concepts\t-\t{NO_CONSTRAINT_NOTE}");
        } else {
            let _ = writeln!(out, "candidate_concepts\t{}", names(&mut self.answer_concepts.iter().copied()));
        }
        for e in &self.top_k {
            let _ = writeln!(
                out,
                "{}\t{}\tscore={:.6}\tconcepts={}",
                e.rank,
                kg.entity_label(e.entity),
                e.energy,
                names(&mut e.concepts.iter().copied())
            );
            if self.used_fallback {
                let _ = writeln!(out, "\t{NO_CONSTRAINT_NOTE}");
            } else if e.supporting.is_empty() {
                let _ = writeln!(out, "\toutside candidate concepts");
            }
            for ct in &e.supporting {
                let _ = writeln!(
                    out,
                    "\tcommonsense\t({}, {}, {})",
                    kg.concept_label(ct.head),
                    kg.relation_label(ct.relation),
                    kg.concept_label(ct.tail)
                );
            }
        }
        out
    }
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub mode: String,
    pub metrics: Metrics,
}

pub const METRICS_HEADER: [&str; 7] = ["model", "mode", "MR", "MRR", "Hits@1", "Hits@3", "Hits@10"];

fn metric_cells(row: &MetricsRow) -> [String; 7] {
    let m = &row.metrics;
    [
        row.model.clone(),
        row.mode.clone(),
        format!("{:.1}", m.mr),
        format!("{:.3}", m.mrr),
        format!("{:.3}", m.hits1),
        format!("{:.3}", m.hits3),
        format!("{:.3}", m.hits10),
    ]
}

/// Tab-separated table with a header line.
pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut out = METRICS_HEADER.join("\t");
    out.push('\n');
    for row in rows {
        let m = &row.metrics;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.model, row.mode, m.mr, m.mrr, m.hits1, m.hits3, m.hits10
        );
    }
    out
}

/// Column-aligned plain-text table.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let cells: Vec<[String; 7]> = rows.iter().map(metric_cells).collect();
    let mut widths = METRICS_HEADER.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[String]| {
        let padded: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(&METRICS_HEADER.map(String::from));
    for row in &cells {
        line(row);
    }
    out
}
