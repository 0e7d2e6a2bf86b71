use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::run::{run_experiment, RunResults, RESULTS_FILE};
use crate::scenario::{Category, ClassCountDistribution};
use crate::stream::SyntheticSpec;
use crate::{Error, Result};

/// A grid of runs: the cartesian product of every axis applied to `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteGrid {
    pub base: RunConfig,
    pub methods: Vec<Method>,
    #[serde(default = "both")]
    pub dmu: Vec<bool>,
    pub categories: Vec<Category>,
    pub num_tasks: Vec<u32>,
    #[serde(default)]
    pub distributions: Vec<ClassCountDistribution>,
    #[serde(default)]
    pub buffer_capacities: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Write every run's outputs below this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Task counts compared in the main results table.
pub const TASK_SIZE_PRESETS: [u32; 3] = [5, 10, 20];

/// Named grids mirroring the standard comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuitePreset {
    /// Every method with and without gating, all categories and task sizes.
    Main,
    /// Exponential against Gaussian class counts, moderate category, 10 tasks.
    Distribution,
    /// Gating across buffer capacities, moderate category, 10 tasks.
    Buffer,
}

impl std::str::FromStr for SuitePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(SuitePreset::Main),
            "distribution" => Ok(SuitePreset::Distribution),
            "buffer" => Ok(SuitePreset::Buffer),
            other => Err(Error::Config(format!(
                "unknown suite preset {other:?} (expected main, distribution or buffer)"
            ))),
        }
    }
}

fn both() -> Vec<bool> {
    vec![false, true]
}

/// Identifies a table cell; runs differing only by seed share a key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub method: Method,
    pub dmu: bool,
    pub category: Category,
    pub num_tasks: u32,
    pub distribution: String,
    pub buffer_capacity: usize,
}

impl CellKey {
    fn of(r: &RunResults) -> Self {
        CellKey {
            method: r.method,
            dmu: r.dmu,
            category: r.category,
            num_tasks: r.num_tasks,
            distribution: r.distribution.clone(),
            buffer_capacity: r.buffer_capacity,
        }
    }

    fn label(&self) -> String {
        format!(
            "{}{}_{}_t{}_{}_m{}",
            self.method.key(),
            if self.dmu { "_dmu" } else { "" },
            self.category.short_name(),
            self.num_tasks,
            self.distribution,
            self.buffer_capacity
        )
    }

    fn column(&self) -> ColumnKey {
        ColumnKey {
            num_tasks: self.num_tasks,
            buffer_capacity: self.buffer_capacity,
            distribution: self.distribution.clone(),
            category: self.category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ColumnKey {
    num_tasks: u32,
    buffer_capacity: usize,
    distribution: String,
    category: Category,
}

impl SuiteGrid {
    pub fn preset(preset: SuitePreset, base: RunConfig, seeds: Vec<u64>) -> Self {
        let replay = vec![Method::ErRandom, Method::ErMir, Method::ErGss];
        let grid = SuiteGrid {
            base,
            methods: Vec::new(),
            dmu: both(),
            categories: vec![Category::ModerateTerm],
            num_tasks: vec![10],
            distributions: Vec::new(),
            buffer_capacities: Vec::new(),
            seeds,
            output_dir: None,
        };
        match preset {
            SuitePreset::Main => SuiteGrid {
                methods: Method::ALL.to_vec(),
                categories: vec![
                    Category::ShortTerm,
                    Category::ModerateTerm,
                    Category::LongTerm,
                ],
                num_tasks: TASK_SIZE_PRESETS.to_vec(),
                ..grid
            },
            SuitePreset::Distribution => SuiteGrid {
                methods: replay,
                distributions: vec![
                    ClassCountDistribution::default(),
                    ClassCountDistribution::gaussian_default(),
                ],
                ..grid
            },
            SuitePreset::Buffer => SuiteGrid {
                methods: replay,
                buffer_capacities: crate::buffer::CAPACITY_PRESETS.to_vec(),
                ..grid
            },
        }
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = super::config::parse_with_overrides(&text, overrides)?;
        let mut grid: SuiteGrid = table.try_into()?;
        grid.base
            .resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(grid)
    }

    /// Every run of the grid. Finetune runs are expanded once, without a
    /// buffer and without gating. Synthetic datasets are redrawn per seed.
    pub fn expand(&self) -> Vec<RunConfig> {
        let dists = if self.distributions.is_empty() {
            vec![self.base.scenario.class_count_distribution]
        } else {
            self.distributions.clone()
        };
        let capacities = if self.buffer_capacities.is_empty() {
            vec![self.base.buffer_capacity]
        } else {
            self.buffer_capacities.clone()
        };
        let mut out = Vec::new();
        for &method in &self.methods {
            for &dmu in &self.dmu {
                if method == Method::Finetune && dmu {
                    continue;
                }
                for &category in &self.categories {
                    for &t in &self.num_tasks {
                        for &dist in &dists {
                            for &cap in &capacities {
                                if method == Method::Finetune && cap != capacities[0] {
                                    continue;
                                }
                                for &seed in &self.seeds {
                                    let mut cfg = self.base.clone();
                                    cfg.seed = seed;
                                    cfg.method = method;
                                    cfg.dmu = dmu;
                                    cfg.buffer_capacity =
                                        if method.uses_replay() { cap } else { 0 };
                                    cfg.scenario.category = category;
                                    cfg.scenario.num_tasks = t;
                                    cfg.scenario.class_count_distribution = dist;
                                    cfg.scenario.seed = None;
                                    if let super::config::DatasetSource::Synthetic(spec) =
                                        &mut cfg.dataset
                                    {
                                        *spec = SyntheticSpec {
                                            seed,
                                            ..spec.clone()
                                        };
                                    }
                                    out.push(cfg);
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(root) = &self.output_dir {
            for cfg in &mut out {
                let d = cfg.scenario.class_count_distribution.short_name();
                let name = format!(
                    "{}{}_{}_t{}_{}_m{}_s{}",
                    cfg.method.key(),
                    if cfg.dmu { "_dmu" } else { "" },
                    cfg.scenario.category.short_name(),
                    cfg.scenario.num_tasks,
                    d,
                    cfg.buffer_capacity,
                    cfg.seed
                );
                cfg.output_dir = Some(root.join(name));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub runs: usize,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub config_hash: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cells: Vec<CellSummary>,
    pub failures: Vec<RunFailure>,
}

impl SuiteReport {
    pub fn from_results(results: &[RunResults]) -> Self {
        let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
        for r in results {
            groups
                .entry(CellKey::of(r))
                .or_default()
                .push(r.average_accuracy);
        }
        let cells = groups
            .into_iter()
            .map(|(key, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                CellSummary {
                    key,
                    runs: v.len(),
                    mean,
                    std_dev: var.sqrt(),
                }
            })
            .collect();
        SuiteReport {
            cells,
            failures: Vec::new(),
        }
    }

    /// Loads every results file below `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut found = Vec::new();
        collect_results(dir, &mut found)?;
        if found.is_empty() {
            return Err(Error::Data(format!(
                "no {RESULTS_FILE} below {}",
                dir.display()
            )));
        }
        Ok(SuiteReport::from_results(&found))
    }

    pub fn cell(&self, key: &CellKey) -> Option<&CellSummary> {
        self.cells.iter().find(|c| &c.key == key)
    }

    /// Mean accuracy of the gated cell minus the ungated one.
    pub fn gain(&self, key: &CellKey) -> Option<f64> {
        let with = self.cell(&CellKey {
            dmu: true,
            ..key.clone()
        })?;
        let without = self.cell(&CellKey {
            dmu: false,
            ..key.clone()
        })?;
        Some(with.mean - without.mean)
    }

    fn columns(&self) -> Vec<ColumnKey> {
        let mut cols: Vec<ColumnKey> = self.cells.iter().map(|c| c.key.column()).collect();
        cols.sort();
        cols.dedup();
        cols
    }

    fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.cells.iter().map(|c| c.key.method).collect();
        m.sort();
        m.dedup();
        m
    }

    fn lookup(&self, method: Method, dmu: bool, col: &ColumnKey) -> Option<f64> {
        let key = CellKey {
            method,
            dmu,
            category: col.category,
            num_tasks: col.num_tasks,
            distribution: col.distribution.clone(),
            buffer_capacity: if method.uses_replay() {
                col.buffer_capacity
            } else {
                0
            },
        };
        self.cell(&key).map(|c| c.mean)
    }

    /// Average accuracy (%) with one column per `(tasks, buffer, distribution,
    /// category)` combination and, per replay method, rows for the plain
    /// method, the gated method and their gain.
    pub fn to_markdown(&self) -> String {
        let cols: Vec<ColumnKey> = self
            .columns()
            .into_iter()
            .filter(|c| c.buffer_capacity > 0 || self.columns().len() == 1)
            .collect();
        let cols = if cols.is_empty() {
            self.columns()
        } else {
            cols
        };
        let mut out = String::from("| Method |");
        for c in &cols {
            let _ = write!(
                out,
                " T={} {} {} M={} |",
                c.num_tasks,
                c.category.short_name(),
                c.distribution,
                c.buffer_capacity
            );
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(cols.len()));
        out.push('\n');
        let pct = |v: Option<f64>| v.map_or("–".to_string(), |x| format!("{:.2}", 100.0 * x));
        for method in self.methods() {
            let plain: Vec<Option<f64>> =
                cols.iter().map(|c| self.lookup(method, false, c)).collect();
            let _ = write!(out, "| {} |", method.display_name());
            for v in &plain {
                let _ = write!(out, " {} |", pct(*v));
            }
            out.push('\n');
            let gated: Vec<Option<f64>> =
                cols.iter().map(|c| self.lookup(method, true, c)).collect();
            if gated.iter().any(Option::is_some) {
                let _ = write!(out, "| {} + DMU |", method.display_name());
                for v in &gated {
                    let _ = write!(out, " {} |", pct(*v));
                }
                out.push('\n');
                out.push_str("| Gain (Δ) |");
                for (g, p) in gated.iter().zip(&plain) {
                    let d = match (g, p) {
                        (Some(g), Some(p)) => Some(g - p),
                        _ => None,
                    };
                    let _ = write!(out, " {} |", pct(d));
                }
                out.push('\n');
            }
        }
        out
    }

    /// `Method | Distribution | Accuracy` table with gain rows.
    pub fn to_distribution_markdown(&self) -> String {
        let mut out = String::from("| Method | Distribution | Accuracy |\n|---|---|---:|\n");
        for method in self.methods() {
            for col in self.columns() {
                let plain = self.lookup(method, false, &col);
                let gated = self.lookup(method, true, &col);
                if plain.is_none() && gated.is_none() {
                    continue;
                }
                let name = method.display_name();
                if let Some(p) = plain {
                    let _ = writeln!(out, "| {name} | {} | {:.2} |", col.distribution, 100.0 * p);
                }
                if let Some(g) = gated {
                    let _ = writeln!(
                        out,
                        "| {name}+DMU | {} | {:.2} |",
                        col.distribution,
                        100.0 * g
                    );
                }
                if let (Some(p), Some(g)) = (plain, gated) {
                    let _ = writeln!(out, "| Gain (Δ) | | {:.2} |", 100.0 * (g - p));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("cell,method,dmu,category,num_tasks,distribution,buffer,runs,mean,std\n");
        for c in &self.cells {
            let k = &c.key;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                k.label(),
                k.method.key(),
                k.dmu,
                k.category.short_name(),
                k.num_tasks,
                k.distribution,
                k.buffer_capacity,
                c.runs,
                c.mean,
                c.std_dev
            );
        }
        out
    }
}

fn collect_results(dir: &Path, out: &mut Vec<RunResults>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_results(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == RESULTS_FILE) {
            out.push(RunResults::load(&path)?);
        }
    }
    Ok(())
}

/// Runs every configuration in parallel. Failed runs are recorded in the
/// report and do not stop the suite.
pub fn run_configs(configs: &[RunConfig]) -> (Vec<RunResults>, Vec<RunFailure>) {
    let outcomes: Vec<std::result::Result<RunResults, RunFailure>> = configs
        .par_iter()
        .map(|cfg| {
            run_experiment(cfg)
                .map(|o| o.results)
                .map_err(|e| RunFailure {
                    config_hash: cfg.hash(),
                    seed: cfg.seed,
                    error: e.to_string(),
                })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

pub fn run_suite(grid: &SuiteGrid) -> SuiteReport {
    let (results, failures) = run_configs(&grid.expand());
    SuiteReport {
        failures,
        ..SuiteReport::from_results(&results)
    }
}
