//! Run configuration: one TOML file, every field defaulted, with dotted
//! `key=value` overrides.
//!
//! ```toml
//! dataset = "data/nell995"
//! output_dir = "runs/cake"
//! model = "TransE"
//! dim = 200
//! mode = "mvlp"
//!
//! [sampler]
//! strategy = "cans"
//! alpha = 1.0
//!
//! [train]
//! gamma = 12.0
//! max_steps = 20000
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::PredictionMode;
use crate::model::ModelKind;
use crate::profile::DEFAULT_CATEGORY_THRESHOLD;
use crate::sampler::{SamplerConfig, Strategy};
use crate::trainer::{TrainConfig, TrainSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub model: ModelKind,
    pub dim: usize,
    pub mode: PredictionMode,
    pub category_threshold: f64,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            workers: 1,
            model: ModelKind::TransE,
            dim: 200,
            mode: PredictionMode::MultiView,
            category_threshold: DEFAULT_CATEGORY_THRESHOLD,
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("override {key:?}: {message}")]
    OverridePath { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parses an override value as a TOML scalar or array, falling back to a
/// plain string.
fn override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key` (dotted) in `table` to `value`.
pub fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::OverridePath {
            key: key.to_string(),
            message: "empty key segment".into(),
        });
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut current = table;
    for p in parents {
        let entry = current
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.to_string(),
            message: format!("{p:?} is not a table"),
        })?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        Self::from_parts(text, origin, &[])
    }

    /// Parses `text` then applies `key=value` overrides in order.
    pub fn from_parts(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            apply_override(&mut table, k.trim(), override_value(v.trim()))?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) with overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        match path {
            None => Self::from_parts("", "defaults", overrides),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_parts(&text, &p.display().to_string(), overrides)
            }
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(ConfigError::Invalid("dim must be at least 1".into()));
        }
        if self.category_threshold.is_nan() || self.category_threshold <= 0.0 {
            return Err(ConfigError::Invalid("category_threshold must be positive".into()));
        }
        self.sampler.check().map_err(ConfigError::Invalid)?;
        self.train.check().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_setup(&self) -> TrainSetup {
        TrainSetup {
            model: self.model,
            dim: self.dim,
            seed: self.seed,
            workers: self.workers,
            selection: self.mode,
        }
    }
}

/// Named model variants: the baseline, each component on its own, the full
/// combination, and the full combination with one component removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Self-adversarial sampling, raw ranking.
    Base,
    /// Commonsense-aware sampling, raw ranking.
    Cans,
    /// Self-adversarial sampling, multi-view ranking.
    Mvlp,
    /// Commonsense-aware sampling, multi-view ranking.
    Cake,
    /// Full model without relation categories in sampling.
    NoCrns,
    /// Full model without commonsense in sampling.
    NoCsns,
    /// Full model with raw ranking.
    NoMvlp,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Base,
        Variant::Cans,
        Variant::Mvlp,
        Variant::Cake,
        Variant::NoCrns,
        Variant::NoCsns,
        Variant::NoMvlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Cans => "cans",
            Variant::Mvlp => "mvlp",
            Variant::Cake => "cake",
            Variant::NoCrns => "no-crns",
            Variant::NoCsns => "no-csns",
            Variant::NoMvlp => "no-mvlp",
        }
    }

    /// Row label such as `TransE+CAKE` or `TransE+CAKE-CRNS`.
    pub fn row_label(self, model: ModelKind) -> String {
        let suffix = match self {
            Variant::Base => "",
            Variant::Cans => "+CANS",
            Variant::Mvlp => "+MVLP",
            Variant::Cake => "+CAKE",
            Variant::NoCrns => "+CAKE-CRNS",
            Variant::NoCsns => "+CAKE-CSNS",
            Variant::NoMvlp => "+CAKE-MVLP",
        };
        format!("{model}{suffix}")
    }

    /// Sets the sampling strategy, ablation flags and prediction mode.
    pub fn apply(self, cfg: &mut RunConfig) {
        let cans = |cfg: &mut RunConfig, commonsense: bool, categories: bool| {
            cfg.sampler.strategy = Strategy::Cans;
            cfg.sampler.use_commonsense = commonsense;
            cfg.sampler.use_relation_categories = categories;
        };
        match self {
            Variant::Base | Variant::Mvlp => cfg.sampler.strategy = Strategy::SelfAdversarial,
            Variant::Cans | Variant::Cake | Variant::NoMvlp => cans(cfg, true, true),
            Variant::NoCrns => cans(cfg, true, false),
            Variant::NoCsns => cans(cfg, false, true),
        }
        cfg.mode = match self {
            Variant::Base | Variant::Cans | Variant::NoMvlp => PredictionMode::RawFactOnly,
            _ => PredictionMode::MultiView,
        };
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant {s:?} (expected one of {})", names.join(", "))
            })
    }
}
