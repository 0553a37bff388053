//! Indexed in-memory knowledge graph.
//!
//! Labels are mapped to dense ids in lexicographic order, so the same input
//! files always produce the same ids regardless of line order. The graph is
//! immutable once built and can be shared freely between worker threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

/// Concept assigned to entities that have no entry in the concept file.
pub const SENTINEL_CONCEPT: &str = "__UNK__";

const ENTITY_BITS: u32 = 24;
const RELATION_BITS: u32 = 16;

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Index into the entity vocabulary.
    EntityId
);
dense_id!(
    /// Index into the relation vocabulary.
    RelationId
);
dense_id!(
    /// Index into the concept vocabulary.
    ConceptId
);

/// One `(head, relation, tail)` fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }

    /// Packs the triple into one 64-bit key (24 bits head, 16 bits relation,
    /// 24 bits tail). Vocabulary sizes are checked at build time so the
    /// packing is injective for every graph that builds successfully.
    #[inline]
    pub fn key(self) -> u64 {
        ((self.head.0 as u64) << (ENTITY_BITS + RELATION_BITS))
            | ((self.relation.0 as u64) << ENTITY_BITS)
            | self.tail.0 as u64
    }

    /// Returns the entity on `side`.
    #[inline]
    pub fn entity(self, side: Side) -> EntityId {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of the triple with the entity on `side` replaced.
    #[inline]
    pub fn with_entity(self, side: Side, entity: EntityId) -> Triple {
        match side {
            Side::Head => Triple { head: entity, ..self },
            Side::Tail => Triple { tail: entity, ..self },
        }
    }
}

/// Entity slot of a triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Head, Side::Tail];

    pub fn opposite(self) -> Side {
        match self {
            Side::Head => Side::Tail,
            Side::Tail => Side::Head,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
        })
    }
}

/// Bidirectional label ↔ dense id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from labels, assigning ids in sorted label order.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = sorted.into_iter().collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        Vocab { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A triple as read from a dataset file, still keyed by labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    /// 1-based source line, 0 when synthesized.
    pub line: usize,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        RawTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            line: 0,
        }
    }
}

/// One `entity<TAB>concept` assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawConcept {
    pub entity: String,
    pub concept: String,
    pub line: usize,
}

impl RawConcept {
    pub fn new(entity: impl Into<String>, concept: impl Into<String>) -> Self {
        RawConcept {
            entity: entity.into(),
            concept: concept.into(),
            line: 0,
        }
    }
}

/// All parsed records of a dataset, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawDataset {
    pub train: Vec<RawTriple>,
    pub valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
    pub concepts: Vec<RawConcept>,
}

/// Non-fatal oddities encountered while building a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildWarnings {
    /// Repeated identical `entity<TAB>concept` lines.
    pub duplicate_concept_lines: usize,
    /// Entities first seen in the valid or test split.
    pub eval_only_entities: usize,
    /// Duplicate train triples dropped from the train list.
    pub duplicate_train_triples: usize,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("too many entities for 64-bit triple keys: {0} (max {max})", max = 1u64 << ENTITY_BITS)]
    TooManyEntities(usize),
    #[error("too many relations for 64-bit triple keys: {0} (max {max})", max = 1u64 << RELATION_BITS)]
    TooManyRelations(usize),
}

/// Which split a triple list came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    concepts: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    hr_index: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    rt_index: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    train_keys: HashSet<u64>,
    all_true: HashSet<u64>,
    all_hr: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    all_rt: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    entity_concepts: Vec<Vec<ConceptId>>,
    concept_entities: Vec<Vec<EntityId>>,
    sentinel: Option<ConceptId>,
    sentinel_entities: usize,
    warnings: BuildWarnings,
}

/// Builds the graph from raw records.
///
/// The entity vocabulary covers every label in any split or in the concept
/// file. Entities without a concept line receive [`SENTINEL_CONCEPT`].
pub fn build_graph(raw: &RawDataset) -> Result<KnowledgeGraph, GraphError> {
    let splits = [&raw.train, &raw.valid, &raw.test];
    let entity_labels = splits
        .iter()
        .flat_map(|s| s.iter().flat_map(|t| [t.head.as_str(), t.tail.as_str()]))
        .chain(raw.concepts.iter().map(|c| c.entity.as_str()));
    let entities = Vocab::from_labels(entity_labels);
    let relations = Vocab::from_labels(
        splits
            .iter()
            .flat_map(|s| s.iter().map(|t| t.relation.as_str())),
    );
    if entities.len() > 1 << ENTITY_BITS {
        return Err(GraphError::TooManyEntities(entities.len()));
    }
    if relations.len() > 1 << RELATION_BITS {
        return Err(GraphError::TooManyRelations(relations.len()));
    }

    let mut warnings = BuildWarnings::default();

    // entity label -> concept labels, accumulated across lines
    let mut assigned: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in &raw.concepts {
        if !assigned
            .entry(c.entity.as_str())
            .or_default()
            .insert(c.concept.as_str())
        {
            warnings.duplicate_concept_lines += 1;
        }
    }
    let sentinel_entities = entities
        .labels()
        .iter()
        .filter(|l| !assigned.contains_key(l.as_str()))
        .count();
    let mut concept_labels: BTreeSet<&str> = assigned.values().flatten().copied().collect();
    if sentinel_entities > 0 {
        concept_labels.insert(SENTINEL_CONCEPT);
    }
    let concepts = Vocab::from_labels(concept_labels);
    let sentinel = concepts.get(SENTINEL_CONCEPT).map(ConceptId);

    let mut entity_concepts = vec![Vec::new(); entities.len()];
    let mut concept_entities = vec![Vec::new(); concepts.len()];
    for (e, label) in entities.labels().iter().enumerate() {
        let cs: Vec<ConceptId> = match assigned.get(label.as_str()) {
            Some(set) => set
                .iter()
                .map(|c| ConceptId(concepts.get(c).expect("concept in vocab")))
                .collect(),
            None => vec![sentinel.expect("sentinel present when needed")],
        };
        let mut cs = cs;
        cs.sort_unstable();
        for &c in &cs {
            concept_entities[c.index()].push(EntityId(e as u32));
        }
        entity_concepts[e] = cs;
    }

    let resolve = |t: &RawTriple| {
        Triple::new(
            EntityId(entities.get(&t.head).expect("entity in vocab")),
            RelationId(relations.get(&t.relation).expect("relation in vocab")),
            EntityId(entities.get(&t.tail).expect("entity in vocab")),
        )
    };

    let mut train = Vec::with_capacity(raw.train.len());
    let mut train_keys = HashSet::with_capacity(raw.train.len());
    let mut train_entities = HashSet::new();
    for t in raw.train.iter().map(resolve) {
        if train_keys.insert(t.key()) {
            train.push(t);
            train_entities.insert(t.head);
            train_entities.insert(t.tail);
        } else {
            warnings.duplicate_train_triples += 1;
        }
    }
    let valid: Vec<Triple> = raw.valid.iter().map(resolve).collect();
    let test: Vec<Triple> = raw.test.iter().map(resolve).collect();
    warnings.eval_only_entities = valid
        .iter()
        .chain(&test)
        .flat_map(|t| [t.head, t.tail])
        .filter(|e| !train_entities.contains(e))
        .collect::<HashSet<_>>()
        .len();

    let mut hr_index: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
    let mut rt_index: HashMap<(RelationId, EntityId), Vec<EntityId>> = HashMap::new();
    for t in &train {
        hr_index.entry((t.head, t.relation)).or_default().push(t.tail);
        rt_index.entry((t.relation, t.tail)).or_default().push(t.head);
    }
    sort_values(&mut hr_index);
    sort_values(&mut rt_index);

    let mut all_true = HashSet::with_capacity(train.len() + valid.len() + test.len());
    let mut all_hr: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
    let mut all_rt: HashMap<(RelationId, EntityId), Vec<EntityId>> = HashMap::new();
    for t in train.iter().chain(&valid).chain(&test) {
        if all_true.insert(t.key()) {
            all_hr.entry((t.head, t.relation)).or_default().push(t.tail);
            all_rt.entry((t.relation, t.tail)).or_default().push(t.head);
        }
    }
    sort_values(&mut all_hr);
    sort_values(&mut all_rt);

    if warnings.duplicate_concept_lines > 0 {
        log::warn!(
            "{} duplicate entity-concept lines ignored",
            warnings.duplicate_concept_lines
        );
    }
    if sentinel_entities > 0 {
        log::warn!("{sentinel_entities} entities have no concept; assigned {SENTINEL_CONCEPT}");
    }

    Ok(KnowledgeGraph {
        entities,
        relations,
        concepts,
        train,
        valid,
        test,
        hr_index,
        rt_index,
        train_keys,
        all_true,
        all_hr,
        all_rt,
        entity_concepts,
        concept_entities,
        sentinel,
        sentinel_entities,
        warnings,
    })
}

fn sort_values<K>(map: &mut HashMap<K, Vec<EntityId>>) {
    for v in map.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn concepts(&self) -> &Vocab {
        &self.concepts
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn concept_id(&self, label: &str) -> Option<ConceptId> {
        self.concepts.get(label).map(ConceptId)
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0)
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        self.relations.label(r.0)
    }

    pub fn concept_label(&self, c: ConceptId) -> &str {
        self.concepts.label(c.0)
    }

    /// Deduplicated train triples in first-seen order.
    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Train tails of `(head, relation, ·)`, sorted.
    pub fn train_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.hr_index
            .get(&(head, relation))
            .map_or(&[], Vec::as_slice)
    }

    /// Train heads of `(·, relation, tail)`, sorted.
    pub fn train_heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.rt_index
            .get(&(relation, tail))
            .map_or(&[], Vec::as_slice)
    }

    pub fn hr_index(&self) -> &HashMap<(EntityId, RelationId), Vec<EntityId>> {
        &self.hr_index
    }

    pub fn rt_index(&self) -> &HashMap<(RelationId, EntityId), Vec<EntityId>> {
        &self.rt_index
    }

    #[inline]
    pub fn in_train(&self, t: Triple) -> bool {
        self.train_keys.contains(&t.key())
    }

    /// Membership in train ∪ valid ∪ test.
    #[inline]
    pub fn is_true(&self, t: Triple) -> bool {
        self.all_true.contains(&t.key())
    }

    pub fn num_true(&self) -> usize {
        self.all_true.len()
    }

    /// Every tail `t` with `(head, relation, t)` in any split, sorted.
    pub fn true_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.all_hr.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    /// Every head `h` with `(h, relation, tail)` in any split, sorted.
    pub fn true_heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.all_rt.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }

    /// Known-true entities for the `side` slot given the rest of `t`.
    pub fn true_entities(&self, t: Triple, side: Side) -> &[EntityId] {
        match side {
            Side::Head => self.true_heads(t.relation, t.tail),
            Side::Tail => self.true_tails(t.head, t.relation),
        }
    }

    /// Sorted, non-empty concept list of `e`.
    pub fn concepts_of(&self, e: EntityId) -> &[ConceptId] {
        &self.entity_concepts[e.index()]
    }

    /// Sorted members of concept `c`.
    pub fn entities_of(&self, c: ConceptId) -> &[EntityId] {
        &self.concept_entities[c.index()]
    }

    pub fn sentinel_concept(&self) -> Option<ConceptId> {
        self.sentinel
    }

    /// Number of entities that received the sentinel concept.
    pub fn sentinel_entities(&self) -> usize {
        self.sentinel_entities
    }

    pub fn warnings(&self) -> &BuildWarnings {
        &self.warnings
    }

    /// Relations that have at least one train triple, ascending.
    pub fn train_relations(&self) -> Vec<RelationId> {
        let set: BTreeSet<RelationId> = self.train.iter().map(|t| t.relation).collect();
        set.into_iter().collect()
    }

    pub fn label_triple(&self, t: Triple) -> (&str, &str, &str) {
        (
            self.entity_label(t.head),
            self.relation_label(t.relation),
            self.entity_label(t.tail),
        )
    }

    /// Converts back into label records. Sentinel assignments are not
    /// written, so rebuilding from the result reproduces this graph.
    pub fn to_raw(&self) -> RawDataset {
        let conv = |ts: &[Triple]| {
            ts.iter()
                .map(|&t| {
                    let (h, r, tl) = self.label_triple(t);
                    RawTriple::new(h, r, tl)
                })
                .collect()
        };
        let concepts = (0..self.num_entities() as u32)
            .map(EntityId)
            .flat_map(|e| {
                self.concepts_of(e)
                    .iter()
                    .filter(|&&c| Some(c) != self.sentinel)
                    .map(move |&c| RawConcept::new(self.entity_label(e), self.concept_label(c)))
            })
            .collect();
        RawDataset {
            train: conv(&self.train),
            valid: conv(&self.valid),
            test: conv(&self.test),
            concepts,
        }
    }
}
