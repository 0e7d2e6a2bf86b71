use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::{ReplayStrategy, DEFAULT_GSS_CANDIDATES, DEFAULT_MIR_CANDIDATES};
use crate::learner::SgdConfig;
use crate::metrics::DEFAULT_TEST_PER_CLASS;
use crate::scenario::{
    Category, ClassCountDistribution, HyperparameterMode, SampleBudget, ScenarioConfig,
};
use crate::stream::{SyntheticSpec, DEFAULT_BATCH_SIZE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain cross-entropy on the incoming data, no memory.
    Finetune,
    ErRandom,
    /// Random replay evaluated with a nearest-class-mean classifier.
    ErRandomNcm,
    ErMir,
    ErGss,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Finetune,
        Method::ErRandom,
        Method::ErRandomNcm,
        Method::ErMir,
        Method::ErGss,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::ErRandom => "er_random",
            Method::ErRandomNcm => "er_random_ncm",
            Method::ErMir => "er_mir",
            Method::ErGss => "er_gss",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Finetune => "Finetune",
            Method::ErRandom => "ER",
            Method::ErRandomNcm => "ER-NCM",
            Method::ErMir => "MIR",
            Method::ErGss => "GSS",
        }
    }

    pub fn uses_replay(self) -> bool {
        self != Method::Finetune
    }
}

/// Which data feeds the buffer update when the gate drops part of a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSource {
    #[default]
    Gated,
    Full,
}

/// When labels enter the prior used to split batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorUpdate {
    /// After every batch.
    #[default]
    Batch,
    /// After every task.
    Task,
}

/// Schedule settings; catalog size and budgets come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub category: Category,
    pub num_tasks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_set: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_set: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_cap: Option<u32>,
    #[serde(default)]
    pub class_count_distribution: ClassCountDistribution,
    #[serde(default)]
    pub hyperparameter_mode: HyperparameterMode,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Use a pre-generated schedule instead of drawing one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl ScenarioSection {
    pub fn new(category: Category, num_tasks: u32) -> Self {
        ScenarioSection {
            category,
            num_tasks,
            alpha_set: None,
            beta_set: None,
            class_cap: None,
            class_count_distribution: ClassCountDistribution::default(),
            hyperparameter_mode: HyperparameterMode::PerTask,
            seed: None,
            file: None,
        }
    }

    pub fn resolve(&self, total_classes: u32, budgets: Vec<u64>, run_seed: u64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset(
            self.category,
            total_classes,
            self.num_tasks,
            self.seed.unwrap_or(run_seed),
        );
        if let Some(a) = &self.alpha_set {
            cfg.alpha_set = a.clone();
        }
        if let Some(b) = &self.beta_set {
            cfg.beta_set = b.clone();
        }
        if self.class_cap.is_some() {
            cfg.class_cap = self.class_cap;
        }
        cfg.class_count_distribution = self.class_count_distribution;
        cfg.hyperparameter_mode = self.hyperparameter_mode;
        cfg.samples_per_class = SampleBudget::PerClass(budgets);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Manifest { path: PathBuf },
    Synthetic(SyntheticSpec),
}

fn default_capacity() -> usize {
    500
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_mir() -> usize {
    DEFAULT_MIR_CANDIDATES
}
fn default_gss() -> usize {
    DEFAULT_GSS_CANDIDATES
}
fn default_hidden() -> usize {
    64
}
fn default_test_per_class() -> usize {
    DEFAULT_TEST_PER_CLASS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    #[serde(default)]
    pub dmu: bool,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Exemplars retrieved per step; defaults to `batch_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_size: Option<usize>,
    /// Candidate subset size for interfered retrieval; 0 scans the buffer.
    #[serde(default = "default_mir")]
    pub mir_candidates: usize,
    #[serde(default = "default_gss")]
    pub gss_candidates: usize,
    #[serde(default)]
    pub buffer_update_source: UpdateSource,
    #[serde(default)]
    pub prior_update: PriorUpdate,
    #[serde(default)]
    pub sgd: SgdConfig,
    /// Hidden layer width; 0 gives a linear model.
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    /// Also record test accuracy every this many batches (0 disables).
    #[serde(default)]
    pub curve_every: usize,
    pub scenario: ScenarioSection,
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write a resumable checkpoint after every task.
    #[serde(default)]
    pub checkpoint: bool,
}

/// Learning rate of the synthetic benchmark. A single pass at the default
/// rate of 0.001 leaves the small classifier near chance.
pub const SYNTHETIC_LEARNING_RATE: f64 = 0.05;

impl RunConfig {
    /// Synthetic-benchmark run with default settings.
    pub fn synthetic(method: Method, category: Category, num_tasks: u32, seed: u64) -> Self {
        RunConfig {
            seed,
            method,
            dmu: false,
            buffer_capacity: if method.uses_replay() { 500 } else { 0 },
            batch_size: DEFAULT_BATCH_SIZE,
            retrieval_size: None,
            mir_candidates: DEFAULT_MIR_CANDIDATES,
            gss_candidates: DEFAULT_GSS_CANDIDATES,
            buffer_update_source: UpdateSource::Gated,
            prior_update: PriorUpdate::Batch,
            sgd: SgdConfig {
                learning_rate: SYNTHETIC_LEARNING_RATE,
                ..SgdConfig::default()
            },
            hidden_dim: 64,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            curve_every: 0,
            scenario: ScenarioSection::new(category, num_tasks),
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            }),
            output_dir: None,
            checkpoint: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Finetune {
            if self.buffer_capacity > 0 {
                return Err(Error::Config("finetune runs must not use a buffer".into()));
            }
            if self.dmu {
                return Err(Error::Config(
                    "finetune runs cannot enable dynamic model update".into(),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.retrieval_size == Some(0) {
            return Err(Error::Config("retrieval_size must be at least 1".into()));
        }
        if self.gss_candidates == 0 {
            return Err(Error::Config("gss_candidates must be at least 1".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Config("test_per_class must be at least 1".into()));
        }
        self.sgd.validate()
    }

    pub fn retrieval_size(&self) -> usize {
        self.retrieval_size.unwrap_or(self.batch_size)
    }

    pub fn strategy(&self) -> Option<ReplayStrategy> {
        match self.method {
            Method::Finetune => None,
            Method::ErRandom | Method::ErRandomNcm => Some(ReplayStrategy::Random),
            Method::ErMir => Some(ReplayStrategy::Mir {
                candidates: (self.mir_candidates > 0).then_some(self.mir_candidates),
            }),
            Method::ErGss => Some(ReplayStrategy::Gss {
                candidates: self.gss_candidates,
            }),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs and
    /// checkpoints go.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            output_dir: None,
            checkpoint: false,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let table = parse_with_overrides(text, overrides)?;
        let cfg: RunConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative dataset and scenario paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Manifest { path } = &mut self.dataset {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(file) = &mut self.scenario.file {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses `text` as TOML and applies `key=value` overrides (dotted keys for
/// nested tables). Values are read as TOML when possible, as strings
/// otherwise.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<toml::Table> {
    let mut table: toml::Table = text.parse()?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let value = parse_override_value(raw.trim());
        set_dotted(&mut table, key.trim(), value)?;
    }
    Ok(table)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("probe key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut current = table;
    for part in parts {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
method = "er_mir"
dmu = true

[sgd]
learning_rate = 0.05
weight_decay = 0.0001

[scenario]
category = "short_term"
num_tasks = 5

[dataset]
kind = "synthetic"
num_classes = 20
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(SAMPLE, &[]).unwrap();
        assert_eq!(cfg.method, Method::ErMir);
        assert_eq!(cfg.buffer_capacity, 500);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.mir_candidates, 50);
        assert_eq!(
            cfg.strategy(),
            Some(ReplayStrategy::Mir {
                candidates: Some(50)
            })
        );
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let cfg = RunConfig::from_toml(
            SAMPLE,
            &[
                "sgd.learning_rate=0.2".into(),
                "scenario.category=long_term".into(),
                "mir_candidates = 0".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.sgd.learning_rate, 0.2);
        assert_eq!(cfg.scenario.category, Category::LongTerm);
        assert_eq!(
            cfg.strategy(),
            Some(ReplayStrategy::Mir { candidates: None })
        );
    }

    #[test]
    fn finetune_with_buffer_rejected() {
        let err = RunConfig::from_toml(SAMPLE, &["method=finetune".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(SAMPLE, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = RunConfig::from_toml(SAMPLE, &[]).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, cfg);
        let moved = RunConfig {
            output_dir: Some("elsewhere".into()),
            ..cfg.clone()
        };
        assert_eq!(moved.hash(), cfg.hash());
        let other = RunConfig {
            seed: 4,
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
    }
}
