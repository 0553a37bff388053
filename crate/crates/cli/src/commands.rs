use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgc_core::config::{ConfigError, RunConfig, Variant};
use kgc_core::dataset::DatasetError;
use kgc_core::eval::{self, EvalError, LinkQuery, MetricsRow};
use kgc_core::graph::{Side, Split};
use kgc_core::model::{CheckpointError, ModelParams};
use kgc_core::sampler::Strategy;
use kgc_core::trainer::{self, TrainError, TrainOutcome};
use kgc_core::{Error as CoreError, Prepared};
use thiserror::Error;

use crate::{Cli, Command, Format};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("checkpoint {path} does not match the configuration: {detail}")]
    CheckpointMismatch { path: PathBuf, detail: String },
    #[error("bad query {query:?}: {detail}")]
    BadQuery { query: String, detail: String },
}

/// Short machine-readable class of an error.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Dataset(_) | CoreError::Graph(_) => "dataset",
                CoreError::Checkpoint(_) => "checkpoint",
                CoreError::Train(_) => "train",
                CoreError::Eval(_) => "eval",
                CoreError::Config(_) => "config",
            };
        }
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<DatasetError>() {
            return "dataset";
        }
        if cause.is::<CheckpointError>() {
            return "checkpoint";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<EvalError>() {
            return "eval";
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::CheckpointMismatch { .. } => "checkpoint",
                CliError::BadQuery { .. } => "query",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "other"
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match cli.command {
        Command::Prepare { dataset, out } => {
            let dataset = dataset.unwrap_or_else(|| cfg.dataset.clone());
            prepare(&cfg, &dataset, &out.unwrap_or_else(|| cfg.output_dir.clone()))
        }
        Command::Train { variant, out } => {
            if let Some(v) = variant {
                v.apply(&mut cfg);
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            train(&cfg, variant, &out)
        }
        Command::Eval {
            checkpoint,
            mode,
            variant,
            split,
            format,
        } => {
            if let Some(v) = variant {
                v.apply(&mut cfg);
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            evaluate(&cfg, variant, &checkpoint, split.into(), format)
        }
        Command::Predict { query, checkpoint, k } => predict(&cfg, &query, &checkpoint, k),
        Command::CompareNs { out, format } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("compare-ns"));
            compare_ns(&cfg, &out, format)
        }
    }
}

fn load(cfg: &RunConfig, dataset: &Path) -> Result<Prepared> {
    let prepared = Prepared::load(dataset, cfg.category_threshold)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let kg = &prepared.kg;
    log::info!(
        "{}: {} entities, {} relations, {} concepts, {}/{}/{} train/valid/test",
        dataset.display(),
        kg.num_entities(),
        kg.num_relations(),
        kg.num_concepts(),
        kg.train().len(),
        kg.valid().len(),
        kg.test().len()
    );
    let w = kg.warnings();
    if kg.sentinel_entities() > 0 {
        log::warn!("{} entities have no concept and use the sentinel concept", kg.sentinel_entities());
    }
    if w.duplicate_concept_lines > 0 {
        log::warn!("{} duplicate entity-concept lines ignored", w.duplicate_concept_lines);
    }
    if w.duplicate_train_triples > 0 {
        log::warn!("{} duplicate train triples dropped", w.duplicate_train_triples);
    }
    Ok(prepared)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn prepare(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let p = load(cfg, dataset)?;
    create_dir(out)?;
    let report = p.validation_report();
    let files = [
        ("c1.tsv", p.commonsense.c1_tsv(&p.kg)),
        ("c2.txt", p.commonsense.c2_text(&p.kg)),
        ("relation_profiles.tsv", p.profiles.to_tsv(&p.kg)),
        ("validate.txt", report.to_text()),
    ];
    for (name, contents) in &files {
        write(&out.join(name), contents)?;
    }
    println!(
        "{} individual commonsense triples, {} relations profiled, {} validation issues -> {}",
        p.commonsense.c1().len(),
        p.profiles.len(),
        report.issue_count(),
        out.display()
    );
    Ok(())
}

fn run_training(cfg: &RunConfig, p: &Prepared) -> Result<TrainOutcome> {
    log::info!(
        "training {} (dim {}) with {} sampling, selection by {} validation MRR",
        cfg.model,
        cfg.dim,
        cfg.sampler.strategy,
        cfg.mode
    );
    let outcome = trainer::train(
        &p.kg,
        &p.commonsense,
        &p.profiles,
        &cfg.sampler,
        &cfg.train,
        &cfg.train_setup(),
        |r| match r.valid_mrr {
            Some(m) => log::info!("step {:>7}  loss {:.5}  valid MRR {:.4}", r.step, r.loss, m),
            None => log::info!("step {:>7}  loss {:.5}", r.step, r.loss),
        },
    )?;
    Ok(outcome)
}

fn save_run(cfg: &RunConfig, outcome: &TrainOutcome, out: &Path, variant: Option<Variant>) -> Result<()> {
    create_dir(out)?;
    outcome
        .params
        .save(&out.join("model.ckpt"))
        .with_context(|| format!("saving checkpoint in {}", out.display()))?;
    write(&out.join("train_log.tsv"), &trainer::log_tsv(&outcome.log))?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    let summary = serde_json::json!({
        "model": cfg.model.name(),
        "variant": variant.map(|v| v.name()),
        "strategy": cfg.sampler.strategy.name(),
        "selection_mode": cfg.mode.name(),
        "steps": outcome.steps_run,
        "best_step": outcome.best_step,
        "best_valid_mrr": outcome.best_valid_mrr,
    });
    write(&out.join("summary.json"), &format!("{summary:#}\n"))
}

fn train(cfg: &RunConfig, variant: Option<Variant>, out: &Path) -> Result<()> {
    let p = load(cfg, &cfg.dataset)?;
    let outcome = run_training(cfg, &p)?;
    save_run(cfg, &outcome, out, variant)?;
    match outcome.best_valid_mrr {
        Some(m) => println!(
            "best validation MRR {m:.4} at step {} of {}; checkpoint in {}",
            outcome.best_step,
            outcome.steps_run,
            out.display()
        ),
        None => println!("trained {} steps; checkpoint in {}", outcome.steps_run, out.display()),
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, p: &Prepared, path: &Path) -> Result<ModelParams> {
    let params = ModelParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mismatch = |detail: String| CliError::CheckpointMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if params.kind() != cfg.model {
        bail!(mismatch(format!(
            "it holds a {} model but the configuration asks for {}",
            params.kind(),
            cfg.model
        )));
    }
    if params.dim() != cfg.dim {
        bail!(mismatch(format!(
            "it has dimension {} but the configuration asks for {}",
            params.dim(),
            cfg.dim
        )));
    }
    if params.num_entities() != p.kg.num_entities() || params.num_relations() != p.kg.num_relations() {
        bail!(mismatch(format!(
            "it covers {} entities and {} relations but the dataset has {} and {}",
            params.num_entities(),
            params.num_relations(),
            p.kg.num_entities(),
            p.kg.num_relations()
        )));
    }
    Ok(params)
}

fn print_rows(rows: &[MetricsRow], format: Format) {
    match format {
        Format::Text => print!("{}", eval::metrics_table(rows)),
        Format::Tsv => print!("{}", eval::metrics_tsv(rows)),
    }
}

fn evaluate(cfg: &RunConfig, variant: Option<Variant>, checkpoint: &Path, split: Split, format: Format) -> Result<()> {
    let p = load(cfg, &cfg.dataset)?;
    let params = load_checkpoint(cfg, &p, checkpoint)?;
    let triples = p.kg.split(split);
    let report = eval::with_workers(cfg.workers, || {
        eval::evaluate(triples, &params, &p.commonsense, &p.kg, cfg.mode)
    })?;
    log::info!(
        "{} queries, {} without commonsense constraint",
        report.results.len(),
        report.fallback_count()
    );
    let model = variant.map_or_else(|| cfg.model.name().to_string(), |v| v.row_label(cfg.model));
    print_rows(
        &[MetricsRow {
            model,
            mode: cfg.mode.name().to_string(),
            metrics: report.metrics,
        }],
        format,
    );
    Ok(())
}

/// Parses `head relation ?` or `? relation tail`, whitespace- or
/// tab-separated.
fn parse_query(text: &str, p: &Prepared) -> Result<LinkQuery> {
    let bad = |detail: &str| CliError::BadQuery {
        query: text.to_string(),
        detail: detail.to_string(),
    };
    let parts: Vec<&str> = if text.contains('\t') {
        text.split('\t').map(str::trim).collect()
    } else {
        text.split_whitespace().collect()
    };
    let [h, r, t] = parts[..] else {
        bail!(bad("expected three fields: head relation tail, one of them '?'"));
    };
    let (anchor, missing) = match (h == "?", t == "?") {
        (false, true) => (h, Side::Tail),
        (true, false) => (t, Side::Head),
        _ => bail!(bad("exactly one of head and tail must be '?'")),
    };
    let anchor = p
        .kg
        .entity_id(anchor)
        .ok_or_else(|| bad(&format!("unknown entity {anchor:?}")))?;
    let relation = p
        .kg
        .relation_id(r)
        .ok_or_else(|| bad(&format!("unknown relation {r:?}")))?;
    Ok(LinkQuery::new(anchor, relation, missing))
}

fn predict(cfg: &RunConfig, query: &str, checkpoint: &Path, k: usize) -> Result<()> {
    let p = load(cfg, &cfg.dataset)?;
    let query = parse_query(query, &p)?;
    let params = load_checkpoint(cfg, &p, checkpoint)?;
    let explanation = eval::explain(query, &params, &p.commonsense, &p.kg, k)?;
    print!("{}", explanation.to_text(&p.kg));
    Ok(())
}

fn compare_ns(cfg: &RunConfig, out: &Path, format: Format) -> Result<()> {
    let p = load(cfg, &cfg.dataset)?;
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let mut run = cfg.clone();
        run.sampler.strategy = strategy;
        let outcome = run_training(&run, &p)?;
        save_run(&run, &outcome, &out.join(strategy.name()), None)?;
        let report = eval::with_workers(run.workers, || {
            eval::evaluate(p.kg.test(), &outcome.params, &p.commonsense, &p.kg, run.mode)
        })?;
        log::info!("{strategy}: test MRR {:.4}", report.metrics.mrr);
        rows.push(MetricsRow {
            model: format!("{}+{}", run.model, strategy),
            mode: run.mode.name().to_string(),
            metrics: report.metrics,
        });
    }
    create_dir(out)?;
    write(&out.join("compare_ns.tsv"), &eval::metrics_tsv(&rows))?;
    print_rows(&rows, format);
    Ok(())
}
