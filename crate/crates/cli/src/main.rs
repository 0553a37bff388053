//! `kgc`: prepare datasets, train, evaluate, explain predictions and compare
//! negative-sampling strategies.
//!
//! Failures print one JSON object on stderr, `{"error": "...", "kind": "..."}`,
//! and exit with status 1.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kgc_core::config::Variant;
use kgc_core::eval::PredictionMode;
use kgc_core::graph::Split;

#[derive(Debug, Parser)]
#[command(name = "kgc", version, about = "Concept-aware knowledge graph embedding")]
struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set train.gamma=24`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Cap on worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Raw,
    Mvlp,
}

impl From<ModeArg> for PredictionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => PredictionMode::RawFactOnly,
            ModeArg::Mvlp => PredictionMode::MultiView,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Tsv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write c1.tsv, c2.txt, relation_profiles.tsv and validate.txt.
    Prepare {
        /// Dataset directory or manifest (defaults to `dataset` in the config).
        dataset: Option<PathBuf>,
        /// Output directory (defaults to `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write model.ckpt, train_log.tsv and config.toml.
    Train {
        /// Preset for sampling strategy, ablation flags and selection mode.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filtered MR, MRR and Hits@{1,3,10} of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Label rows and pick the mode from a variant preset.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Explained top-k answers for a query such as "rockets teamplaysinleague ?".
    Predict {
        query: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
    /// Train and test once per sampling strategy: uniform, self-adversarial, cans.
    CompareNs {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": format!("{err:#}"),
                "kind": commands::error_kind(&err),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
