//! Minibatch training under the weighted negative-sampling loss
//!
//! ```text
//! L = −log σ(γ − E(pos)) − Σ 0.5 · w · log σ(E(neg) − γ)
//! ```
//!
//! with the weights `w` held constant. Updates use Adam applied lazily to
//! the rows a batch touches.
//!
//! Each positive in a step draws its negatives from its own RNG stream and
//! produces its own gradient; the gradients are summed in batch order. Runs
//! with the same seed are therefore bit-identical for any worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commonsense::CommonsenseStore;
use crate::eval::{evaluate, worker_pool, PredictionMode};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::model::{init_params, ModelKind, ModelParams};
use crate::profile::RelationProfiles;
use crate::sampler::{NegativeBatch, NegativeSampler, SamplerConfig};

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss of one positive given its own energy and `(energy, weight)` for each
/// negative.
pub fn loss_from_energies(positive: f64, negatives: &[(f64, f64)], gamma: f64) -> f64 {
    softplus(positive - gamma)
        + negatives
            .iter()
            .map(|&(e, w)| 0.5 * w * softplus(gamma - e))
            .sum::<f64>()
}

/// `∂L/∂E(pos)` and `∂L/∂E(negᵢ)`.
pub fn loss_gradients(positive: f64, negatives: &[(f64, f64)], gamma: f64) -> (f64, Vec<f64>) {
    (
        sigmoid(positive - gamma),
        negatives
            .iter()
            .map(|&(e, w)| -0.5 * w * sigmoid(gamma - e))
            .collect(),
    )
}

fn batch_energies(batch: &NegativeBatch, params: &ModelParams) -> Vec<(f64, f64)> {
    batch
        .iter()
        .map(|n| (params.score(n.triple), n.weight))
        .collect()
}

pub fn loss(positive: Triple, batch: &NegativeBatch, params: &ModelParams, gamma: f64) -> f64 {
    debug_assert_eq!(batch.positive, positive);
    loss_from_energies(params.score(positive), &batch_energies(batch, params), gamma)
}

/// Sparse gradient: one dense row per touched entity or relation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    pub entities: BTreeMap<EntityId, Vec<f64>>,
    pub relations: BTreeMap<RelationId, Vec<f64>>,
}

impl SparseGrad {
    /// Adds `scale · ∂E(t)` for one triple.
    pub fn add_triple(&mut self, params: &ModelParams, t: Triple, scale: f64) {
        let ew = params.entity_width();
        let rw = params.relation_width();
        let mut gh = vec![0.0; ew];
        let mut gr = vec![0.0; rw];
        let mut gt = vec![0.0; ew];
        params.add_score_gradients(t, scale, &mut gh, &mut gr, &mut gt);
        self.add_entity(t.head, &gh);
        self.add_entity(t.tail, &gt);
        add_row(self.relations.entry(t.relation).or_insert_with(|| vec![0.0; rw]), &gr);
    }

    fn add_entity(&mut self, e: EntityId, g: &[f64]) {
        add_row(self.entities.entry(e).or_insert_with(|| vec![0.0; g.len()]), g);
    }

    pub fn merge(&mut self, other: &SparseGrad) {
        for (&e, g) in &other.entities {
            self.add_entity(e, g);
        }
        for (&r, g) in &other.relations {
            add_row(self.relations.entry(r).or_insert_with(|| vec![0.0; g.len()]), g);
        }
    }
}

fn add_row(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss of one positive and its gradient, both scaled by `scale`.
pub fn positive_gradient(
    positive: Triple,
    batch: &NegativeBatch,
    params: &ModelParams,
    gamma: f64,
    scale: f64,
) -> (f64, SparseGrad) {
    let e_pos = params.score(positive);
    let negs = batch_energies(batch, params);
    let l = loss_from_energies(e_pos, &negs, gamma);
    let (d_pos, d_negs) = loss_gradients(e_pos, &negs, gamma);
    let mut grad = SparseGrad::default();
    grad.add_triple(params, positive, scale * d_pos);
    for (n, d) in batch.iter().zip(d_negs) {
        grad.add_triple(params, n.triple, scale * d);
    }
    (scale * l, grad)
}

/// Adam whose moments and updates touch only rows with a gradient. Bias
/// correction uses the global step count.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m_ent: Vec<f64>,
    v_ent: Vec<f64>,
    m_rel: Vec<f64>,
    v_rel: Vec<f64>,
}

impl SparseAdam {
    pub fn new(params: &ModelParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        SparseAdam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m_ent: vec![0.0; params.entity_table().len()],
            v_ent: vec![0.0; params.entity_table().len()],
            m_rel: vec![0.0; params.relation_table().len()],
            v_rel: vec![0.0; params.relation_table().len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut ModelParams, grad: &SparseGrad) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ew = params.entity_width();
        let rw = params.relation_width();
        let hyper = (self.learning_rate, self.beta1, self.beta2, self.epsilon, c1, c2);
        for (&e, g) in &grad.entities {
            let range = e.index() * ew..(e.index() + 1) * ew;
            adam_row(
                &mut params.entity_table_mut()[range.clone()],
                &mut self.m_ent[range.clone()],
                &mut self.v_ent[range],
                g,
                hyper,
            );
        }
        for (&r, g) in &grad.relations {
            let range = r.index() * rw..(r.index() + 1) * rw;
            adam_row(
                &mut params.relation_table_mut()[range.clone()],
                &mut self.m_rel[range.clone()],
                &mut self.v_rel[range],
                g,
                hyper,
            );
        }
    }
}

fn adam_row(x: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], hyper: (f64, f64, f64, f64, f64, f64)) {
    let (lr, b1, b2, eps, c1, c2) = hyper;
    for i in 0..x.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Validate every this many steps; 0 validates only at the end.
    pub eval_every: usize,
    pub log_every: usize,
    /// Validation triples used for model selection; 0 uses all.
    pub valid_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 12.0,
            learning_rate: 1e-3,
            batch_size: 1024,
            max_steps: 100_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eval_every: 10_000,
            log_every: 100,
            valid_limit: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !self.gamma.is_finite() {
            return Err("train.gamma must be finite".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("train.beta1 and train.beta2 must lie in [0, 1)".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err("train.epsilon must be positive".into());
        }
        Ok(())
    }
}

/// What the model is and how it is selected.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub model: ModelKind,
    pub dim: usize,
    pub seed: u64,
    pub workers: usize,
    /// Prediction mode used for validation MRR.
    pub selection: PredictionMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    /// Mean loss over the steps since the previous record.
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

pub const LOG_HEADER: &str = "step\tloss\tvalid_mrr";

/// `step<TAB>loss<TAB>valid_mrr` lines under [`LOG_HEADER`]; a missing
/// validation value is written as `-`.
pub fn log_tsv(records: &[LogRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in records {
        let mrr = r.valid_mrr.map_or_else(|| "-".to_string(), |m| format!("{m:.6}"));
        let _ = writeln!(out, "{}\t{:.6}\t{}", r.step, r.loss, mrr);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation MRR, or the final ones when no
    /// validation ran.
    pub params: ModelParams,
    pub best_step: usize,
    pub best_valid_mrr: Option<f64>,
    pub steps_run: usize,
    /// Loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub log: Vec<LogRecord>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step} (learning rate {learning_rate}): {what}")]
    Diverged {
        step: usize,
        learning_rate: f64,
        what: &'static str,
    },
    #[error("the train split is empty")]
    EmptyTrainSet,
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// Seed offset separating the shuffle stream from the initialization stream.
const SHUFFLE_SALT: u64 = 0x5348_5546;
const SAMPLE_SALT: u64 = 0x4e45_4753;

/// RNG for the `index`-th positive processed in the run.
pub fn positive_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_SALT);
    rng.set_stream(index);
    rng
}

/// Trains from a fresh initialization.
pub fn train(
    kg: &KnowledgeGraph,
    cs: &CommonsenseStore,
    profiles: &RelationProfiles,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    setup: &TrainSetup,
    on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    let params = init_params(
        setup.model,
        kg.num_entities(),
        kg.num_relations(),
        setup.dim,
        cfg.gamma,
        setup.seed,
    );
    train_from(params, kg, cs, profiles, sampler_cfg, cfg, setup, on_record)
}

/// Trains starting from `params`.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    mut params: ModelParams,
    kg: &KnowledgeGraph,
    cs: &CommonsenseStore,
    profiles: &RelationProfiles,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    setup: &TrainSetup,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.check().map_err(TrainError::Config)?;
    if setup.dim == 0 {
        return Err(TrainError::Config("dim must be at least 1".into()));
    }
    if kg.train().is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let sampler = NegativeSampler::new(kg, cs, profiles, sampler_cfg.clone()).map_err(TrainError::Config)?;
    let mut adam = SparseAdam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    let valid: Vec<Triple> = match cfg.valid_limit {
        0 => kg.valid().to_vec(),
        n => kg.valid().iter().take(n).copied().collect(),
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(setup.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..kg.train().len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;
    let mut drawn: u64 = 0;

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step_losses = Vec::with_capacity(cfg.max_steps);
    let mut log = Vec::new();
    let mut window = (0.0, 0usize);
    let scale = 1.0 / cfg.batch_size as f64;

    let pool = worker_pool(setup.workers);
    {
        for step in 1..=cfg.max_steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                batch.push((kg.train()[order[cursor]], drawn));
                cursor += 1;
                drawn += 1;
            }

            let params_ref = &params;
            let parts: Vec<(f64, SparseGrad)> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&(positive, index)| {
                        let mut rng = positive_rng(setup.seed, index);
                        let negatives = sampler.sample(positive, params_ref, &mut rng);
                        positive_gradient(positive, &negatives, params_ref, cfg.gamma, scale)
                    })
                    .collect()
            });
            let mut step_loss = 0.0;
            let mut grad = SparseGrad::default();
            for (l, g) in &parts {
                step_loss += l;
                grad.merge(g);
            }
            if !step_loss.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    learning_rate: cfg.learning_rate,
                    what: "loss is not finite",
                });
            }
            adam.apply(&mut params, &grad);
            if !grad
                .entities
                .keys()
                .all(|&e| params.entity(e).iter().all(|x| x.is_finite()))
                || !grad
                    .relations
                    .keys()
                    .all(|&r| params.relation(r).iter().all(|x| x.is_finite()))
            {
                return Err(TrainError::Diverged {
                    step,
                    learning_rate: cfg.learning_rate,
                    what: "parameters are not finite",
                });
            }
            step_losses.push(step_loss);
            window.0 += step_loss;
            window.1 += 1;

            let validate_now = !valid.is_empty()
                && ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.max_steps);
            let log_now = validate_now || (cfg.log_every > 0 && step % cfg.log_every == 0) || step == cfg.max_steps;
            let mut valid_mrr = None;
            if validate_now {
                let mrr = pool
                    .install(|| evaluate(&valid, &params, cs, kg, setup.selection))?
                    .metrics
                    .mrr;
                valid_mrr = Some(mrr);
                if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                    best = Some((mrr, step, params.clone()));
                }
            }
            if log_now {
                let record = LogRecord {
                    step,
                    loss: window.0 / window.1 as f64,
                    valid_mrr,
                };
                window = (0.0, 0);
                on_record(&record);
                log.push(record);
            }
        }
    }

    let steps_run = step_losses.len();
    let (params, best_step, best_valid_mrr) = match best {
        Some((mrr, step, p)) => (p, step, Some(mrr)),
        None => (params, steps_run, None),
    };
    Ok(TrainOutcome {
        params,
        best_step,
        best_valid_mrr,
        steps_run,
        step_losses,
        log,
    })
}
