//! Concept-aware knowledge graph embedding.
//!
//! The pipeline loads a knowledge graph with an entity-to-concept map,
//! abstracts concept-level commonsense from the train triples, profiles
//! relations into 1-1 / 1-N / N-1 / N-N categories, trains TransE, RotatE
//! or DistMult embeddings with commonsense-aware negative sampling, and
//! ranks link-prediction queries with a concept filter followed by a
//! factual score.

pub mod commonsense;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod model;
pub mod profile;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

use std::path::Path;

use thiserror::Error;

pub use commonsense::{build_commonsense, CommonsenseStore, ConceptTriple};
pub use config::{RunConfig, Variant};
pub use dataset::{load_dataset, validate, DatasetManifest, ValidationReport};
pub use eval::{evaluate, explain, rank_query, LinkQuery, Metrics, PredictionMode};
pub use graph::{build_graph, EntityId, KnowledgeGraph, RawDataset, RelationId, Side, Triple};
pub use model::{init_params, ModelKind, ModelParams};
pub use profile::{profile_relations, RelationCategory, RelationProfiles};
pub use sampler::{NegativeSampler, SamplerConfig, Strategy};
pub use trainer::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
}

/// A loaded graph with its derived commonsense and relation profiles.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: RawDataset,
    pub manifest: Option<DatasetManifest>,
    pub kg: KnowledgeGraph,
    pub commonsense: CommonsenseStore,
    pub profiles: RelationProfiles,
}

impl Prepared {
    pub fn from_raw(raw: RawDataset, category_threshold: f64) -> Result<Self, Error> {
        let kg = build_graph(&raw)?;
        let commonsense = build_commonsense(&kg);
        let profiles = profile_relations(&kg, category_threshold);
        Ok(Prepared {
            raw,
            manifest: None,
            kg,
            commonsense,
            profiles,
        })
    }

    /// Loads a dataset directory or manifest file.
    pub fn load(path: &Path, category_threshold: f64) -> Result<Self, Error> {
        let mut manifest = DatasetManifest::locate(path)?;
        let raw = load_dataset(&mut manifest)?;
        let mut prepared = Self::from_raw(raw, category_threshold)?;
        prepared.manifest = Some(manifest);
        Ok(prepared)
    }

    pub fn validation_report(&self) -> ValidationReport {
        validate(&self.raw, &self.kg)
    }
}
