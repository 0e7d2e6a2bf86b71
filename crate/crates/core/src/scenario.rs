//! Realistic task schedules.
//!
//! A [`Scenario`] says, for each of `T` tasks, which classes appear and how
//! many training samples each of them contributes. Three properties are
//! enforced or made possible by construction:
//!
//! 1. every task has between 1 and `N - 1` classes and introduces at least one
//!    class never seen before;
//! 2. classes within a task may carry unequal sample counts;
//! 3. classes may recur in later tasks.
//!
//! Per task, the number of new classes is drawn as `round(beta * X)` and the
//! number of repeated classes as `round(alpha * X)`, `X` coming from the
//! configured [`ClassCountDistribution`]. `alpha` and `beta` are picked
//! uniformly from the candidate sets of the consumption [`Category`]. Which
//! classes appear is then drawn without replacement from the unintroduced and
//! introduced pools, and each class budget is split evenly over its
//! occurrences with the remainder going to the first one.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_for, Purpose};
use crate::{ClassId, Error, Result};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Default rate of the exponential class-count distribution.
///
/// Calibrated by Monte-Carlo so the category class ranges hold for 5, 10 and
/// 20 task runs on both the 101- and 74-class catalogs.
pub const DEFAULT_EXPONENTIAL_RATE: f64 = 0.15;

/// Family of the per-task class count draw `X`; always non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassCountDistribution {
    Exponential {
        rate: f64,
    },
    /// Absolute value of a normal draw.
    Gaussian {
        mean: f64,
        std_dev: f64,
    },
    /// Always returns `value`; used for degenerate and hand-checked schedules.
    Fixed {
        value: f64,
    },
}

impl Default for ClassCountDistribution {
    fn default() -> Self {
        ClassCountDistribution::Exponential {
            rate: DEFAULT_EXPONENTIAL_RATE,
        }
    }
}

impl ClassCountDistribution {
    pub fn gaussian_default() -> Self {
        ClassCountDistribution::Gaussian {
            mean: 0.0,
            std_dev: 0.4,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassCountDistribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
            ClassCountDistribution::Gaussian { mean, std_dev } => {
                mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0
            }
            ClassCountDistribution::Fixed { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid class count distribution {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ClassCountDistribution::Exponential { rate } => {
                Exp::new(rate).expect("validated rate").sample(rng)
            }
            ClassCountDistribution::Gaussian { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated std_dev")
                .sample(rng)
                .abs(),
            ClassCountDistribution::Fixed { value } => value,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ClassCountDistribution::Exponential { .. } => "exp",
            ClassCountDistribution::Gaussian { .. } => "gauss",
            ClassCountDistribution::Fixed { .. } => "fixed",
        }
    }
}

/// How classes are picked from each pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppearanceDistribution {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ShortTerm,
    ModerateTerm,
    LongTerm,
    Custom,
}

impl Category {
    pub const PRESETS: [Category; 3] = [
        Category::ShortTerm,
        Category::ModerateTerm,
        Category::LongTerm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Category::ShortTerm => "short",
            Category::ModerateTerm => "moderate",
            Category::LongTerm => "long",
            Category::Custom => "custom",
        }
    }
}

/// One consumption category row: candidate sets plus the class ranges for the
/// two reference catalogs (101 and 74 classes).
#[derive(Debug, Clone, Copy)]
pub struct CategoryRow {
    pub alpha: &'static [u32],
    pub beta: &'static [u32],
    pub range_101: (u32, u32),
    pub range_74: (u32, u32),
}

pub const SHORT_TERM: CategoryRow = CategoryRow {
    alpha: &[9, 10, 11, 12],
    beta: &[1, 2, 3],
    range_101: (20, 40),
    range_74: (10, 30),
};

pub const MODERATE_TERM: CategoryRow = CategoryRow {
    alpha: &[5, 6, 7, 8],
    beta: &[4, 5, 6],
    range_101: (40, 80),
    range_74: (30, 50),
};

pub const LONG_TERM: CategoryRow = CategoryRow {
    alpha: &[1, 2, 3, 4],
    beta: &[7, 8, 9],
    range_101: (80, 101),
    range_74: (50, 74),
};

impl CategoryRow {
    pub fn of(category: Category) -> Option<CategoryRow> {
        match category {
            Category::ShortTerm => Some(SHORT_TERM),
            Category::ModerateTerm => Some(MODERATE_TERM),
            Category::LongTerm => Some(LONG_TERM),
            Category::Custom => None,
        }
    }

    /// Expected range of distinct introduced classes for a catalog of
    /// `total_classes`. Other catalog sizes scale the 101-class row.
    pub fn class_range(&self, total_classes: u32) -> (u32, u32) {
        match total_classes {
            101 => self.range_101,
            74 => self.range_74,
            n => {
                let scale = |v: u32| ((v as f64 * n as f64 / 101.0).round() as u32).clamp(1, n);
                (scale(self.range_101.0), scale(self.range_101.1))
            }
        }
    }
}

/// Whether `alpha`/`beta` are redrawn for every task or once per run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperparameterMode {
    #[default]
    PerTask,
    PerRun,
}

/// Total training samples available per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleBudget {
    Uniform(u64),
    /// Indexed by class id.
    PerClass(Vec<u64>),
}

impl SampleBudget {
    pub fn resolve(&self, total_classes: u32) -> Result<Vec<u64>> {
        match self {
            SampleBudget::Uniform(n) => Ok(vec![*n; total_classes as usize]),
            SampleBudget::PerClass(v) if v.len() == total_classes as usize => Ok(v.clone()),
            SampleBudget::PerClass(v) => Err(Error::Config(format!(
                "samples_per_class lists {} classes, catalog has {total_classes}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub total_classes: u32,
    pub num_tasks: u32,
    pub alpha_set: Vec<u32>,
    pub beta_set: Vec<u32>,
    #[serde(default)]
    pub class_count_distribution: ClassCountDistribution,
    #[serde(default)]
    pub appearance_distribution: AppearanceDistribution,
    /// Relative appearance weights indexed by class id; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance_weights: Option<Vec<f64>>,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_cap: Option<u32>,
    pub samples_per_class: SampleBudget,
    #[serde(default)]
    pub hyperparameter_mode: HyperparameterMode,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Category preset for a catalog of `total_classes` classes.
    ///
    /// The class cap is the upper end of the category's class range, raised
    /// to `num_tasks` when needed so every task can still introduce a class.
    /// Sample budgets default to 750 per class.
    pub fn preset(category: Category, total_classes: u32, num_tasks: u32, seed: u64) -> Self {
        let (alpha_set, beta_set, class_cap) = match CategoryRow::of(category) {
            Some(row) => {
                let (_, hi) = row.class_range(total_classes);
                (
                    row.alpha.to_vec(),
                    row.beta.to_vec(),
                    Some(hi.max(num_tasks).min(total_classes)),
                )
            }
            None => (vec![1], vec![1], None),
        };
        ScenarioConfig {
            total_classes,
            num_tasks,
            alpha_set,
            beta_set,
            class_count_distribution: ClassCountDistribution::default(),
            appearance_distribution: AppearanceDistribution::Uniform,
            appearance_weights: None,
            category,
            class_cap,
            samples_per_class: SampleBudget::Uniform(750),
            hyperparameter_mode: HyperparameterMode::PerTask,
            rng_seed: seed,
        }
    }

    pub fn effective_cap(&self) -> u32 {
        self.class_cap.unwrap_or(self.total_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.total_classes;
        let t = self.num_tasks;
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n}")));
        }
        if t == 0 {
            return Err(Error::Config("num_tasks must be positive".into()));
        }
        if self.alpha_set.is_empty() || self.alpha_set.contains(&0) {
            return Err(Error::Config(
                "alpha_set must be non-empty and positive".into(),
            ));
        }
        if self.beta_set.is_empty() || self.beta_set.contains(&0) {
            return Err(Error::Config(
                "beta_set must be non-empty and positive".into(),
            ));
        }
        if let Some(cap) = self.class_cap {
            if cap == 0 || cap > n {
                return Err(Error::Config(format!("class_cap {cap} outside [1, {n}]")));
            }
        }
        let cap = self.effective_cap();
        if cap < t {
            return Err(Error::Config(format!(
                "{t} tasks need {t} distinct classes but at most {cap} may be introduced"
            )));
        }
        if let Some(w) = &self.appearance_weights {
            if w.len() != n as usize || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(
                    "appearance_weights must list one non-negative weight per class".into(),
                ));
            }
        }
        self.class_count_distribution.validate()?;
        self.samples_per_class.resolve(n)?;
        Ok(())
    }
}

/// Class counts drawn for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub new: usize,
    pub repeat: usize,
    pub alpha: u32,
    pub beta: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(rename = "i")]
    pub index: usize,
    #[serde(rename = "new")]
    pub new_classes: Vec<ClassId>,
    #[serde(rename = "repeat")]
    pub repeated_classes: Vec<ClassId>,
    #[serde(rename = "counts")]
    pub sample_counts: BTreeMap<ClassId, u64>,
    pub alpha: u32,
    pub beta: u32,
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.new_classes.len() + self.repeated_classes.len()
    }

    /// All classes of the task in ascending order.
    pub fn classes(&self) -> Vec<ClassId> {
        self.sample_counts.keys().copied().collect()
    }

    pub fn num_samples(&self) -> u64 {
        self.sample_counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub seed: u64,
    #[serde(rename = "N")]
    pub total_classes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_cap: Option<u32>,
    /// Per-class training budgets the schedule partitions, indexed by class.
    pub budgets: Vec<u64>,
    pub tasks: Vec<TaskSpec>,
}

impl Scenario {
    /// Training samples over all tasks.
    pub fn num_samples(&self) -> u64 {
        self.tasks.iter().map(TaskSpec::num_samples).sum()
    }

    /// Classes introduced anywhere in the run.
    pub fn introduced_classes(&self) -> BTreeSet<ClassId> {
        self.tasks
            .iter()
            .flat_map(|t| t.new_classes.iter().copied())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        if scenario.version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported scenario version {}",
                scenario.version
            )));
        }
        Ok(scenario)
    }

    pub fn imbalance_factor(&self, alpha: u32) -> Result<f64> {
        imbalance_factor(
            self.total_classes as usize,
            self.introduced_classes().len(),
            alpha,
        )
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Draws the number of new and repeated classes of task `task_index`, given
/// that `introduced` classes have been introduced by earlier tasks.
///
/// `alpha`/`beta` come from `fixed` when the run uses one pair throughout,
/// otherwise they are drawn uniformly from the candidate sets.
pub fn sample_class_counts<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    task_index: usize,
    introduced: usize,
    fixed: Option<(u32, u32)>,
    rng: &mut R,
) -> Result<ClassCounts> {
    let t = config.num_tasks as usize;
    if task_index >= t {
        return Err(Error::Config(format!(
            "task index {task_index} out of range for {t} tasks"
        )));
    }
    let n = config.total_classes as usize;
    let cap = config.effective_cap() as usize;
    let remaining_tasks = t - task_index - 1;
    let max_new = cap
        .saturating_sub(introduced)
        .saturating_sub(remaining_tasks)
        .min(n - 1);
    if max_new == 0 {
        return Err(Error::PoolExhausted {
            pool: "unintroduced",
            requested: 1,
            available: cap.saturating_sub(introduced),
        });
    }

    let (alpha, beta) = match fixed {
        Some(pair) => pair,
        None => (
            *config.alpha_set.choose(rng).expect("non-empty alpha_set"),
            *config.beta_set.choose(rng).expect("non-empty beta_set"),
        ),
    };
    let dist = config.class_count_distribution;
    let raw_repeat = round_half_up(alpha as f64 * dist.sample(rng));
    let raw_new = round_half_up(beta as f64 * dist.sample(rng));

    let new = raw_new.clamp(1, max_new);
    let repeat = if task_index == 0 {
        0
    } else {
        raw_repeat.min(introduced).min(n - 1 - new)
    };
    Ok(ClassCounts {
        new,
        repeat,
        alpha,
        beta,
    })
}

/// Imbalance factor `(N - E) / alpha` of a catalog of `total_classes` where
/// `encountered` classes have been seen.
pub fn imbalance_factor(total_classes: usize, encountered: usize, alpha: u32) -> Result<f64> {
    if alpha == 0 {
        return Err(Error::Config("alpha must be at least 1".into()));
    }
    if encountered > total_classes {
        return Err(Error::Config(format!(
            "encountered {encountered} exceeds catalog size {total_classes}"
        )));
    }
    Ok((total_classes - encountered) as f64 / alpha as f64)
}

fn draw_from_pool<R: Rng + ?Sized>(
    pool: &[ClassId],
    amount: usize,
    weights: Option<&[f64]>,
    name: &'static str,
    rng: &mut R,
) -> Result<Vec<ClassId>> {
    if amount > pool.len() {
        return Err(Error::PoolExhausted {
            pool: name,
            requested: amount,
            available: pool.len(),
        });
    }
    let picked = match weights {
        None => index::sample(rng, pool.len(), amount).into_vec(),
        Some(w) => index::sample_weighted(rng, pool.len(), |i| w[pool[i] as usize], amount)
            .map_err(|e| Error::Config(format!("appearance weights: {e}")))?
            .into_vec(),
    };
    let mut out: Vec<ClassId> = picked.into_iter().map(|i| pool[i]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Picks which classes appear in a task: `new` classes from the catalog
/// classes not yet in `introduced`, `repeat` classes from `introduced`.
///
/// `catalog` is the set of classes that may still be introduced (the whole
/// catalog, or a cap-limited prefix of it). Returns `(new, repeated)`, each
/// sorted ascending.
pub fn sample_appearance<R: Rng + ?Sized>(
    new: usize,
    repeat: usize,
    catalog: &[ClassId],
    introduced: &BTreeSet<ClassId>,
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<(Vec<ClassId>, Vec<ClassId>)> {
    if new == 0 {
        return Err(Error::Config(
            "every task must introduce at least one new class".into(),
        ));
    }
    let fresh: Vec<ClassId> = catalog
        .iter()
        .copied()
        .filter(|c| !introduced.contains(c))
        .collect();
    let seen: Vec<ClassId> = introduced.iter().copied().collect();
    let new_classes = draw_from_pool(&fresh, new, weights, "unintroduced", rng)?;
    let repeated = draw_from_pool(&seen, repeat, weights, "introduced", rng)?;
    Ok((new_classes, repeated))
}

/// Splits each class budget over the tasks it appears in.
///
/// Every occurrence gets `floor(M / m)` samples and the remainder `M mod m`
/// goes to the class's first occurrence. Classes that never appear keep their
/// budget unassigned.
pub fn allocate_samples(
    appearances: &[Vec<ClassId>],
    budgets: &[u64],
) -> Result<Vec<BTreeMap<ClassId, u64>>> {
    let mut occurrences = vec![0u64; budgets.len()];
    for task in appearances {
        for &c in task {
            let slot = occurrences.get_mut(c as usize).ok_or_else(|| {
                Error::Config(format!(
                    "class {c} outside budget table of {}",
                    budgets.len()
                ))
            })?;
            *slot += 1;
        }
    }
    for (c, (&m, &budget)) in occurrences.iter().zip(budgets).enumerate() {
        if m > 0 && budget < m {
            return Err(Error::InsufficientBudget {
                class: c as ClassId,
                budget,
                occurrences: m,
            });
        }
    }

    let mut first_done = vec![false; budgets.len()];
    Ok(appearances
        .iter()
        .map(|task| {
            task.iter()
                .map(|&c| {
                    let (budget, m) = (budgets[c as usize], occurrences[c as usize]);
                    let mut share = budget / m;
                    if !first_done[c as usize] {
                        share += budget % m;
                        first_done[c as usize] = true;
                    }
                    (c, share)
                })
                .collect()
        })
        .collect())
}

/// Builds the full schedule. Deterministic in `config.rng_seed`.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = stream_for(config.rng_seed, Purpose::Scenario);
    let budgets = config.samples_per_class.resolve(config.total_classes)?;
    let catalog: Vec<ClassId> = (0..config.total_classes).collect();
    let weights = config.appearance_weights.as_deref();

    let fixed = match config.hyperparameter_mode {
        HyperparameterMode::PerTask => None,
        HyperparameterMode::PerRun => Some((
            *config.alpha_set.choose(&mut rng).expect("non-empty"),
            *config.beta_set.choose(&mut rng).expect("non-empty"),
        )),
    };

    let mut introduced = BTreeSet::new();
    let mut drafts = Vec::with_capacity(config.num_tasks as usize);
    for i in 0..config.num_tasks as usize {
        let counts = sample_class_counts(config, i, introduced.len(), fixed, &mut rng)
            .map_err(|e| e.in_task(i))?;
        let (new_classes, repeated) = sample_appearance(
            counts.new,
            counts.repeat,
            &catalog,
            &introduced,
            weights,
            &mut rng,
        )
        .map_err(|e| e.in_task(i))?;
        introduced.extend(new_classes.iter().copied());
        drafts.push((new_classes, repeated, counts));
    }

    let appearances: Vec<Vec<ClassId>> = drafts
        .iter()
        .map(|(n, r, _)| n.iter().chain(r).copied().collect())
        .collect();
    let allocations = allocate_samples(&appearances, &budgets)?;

    let tasks = drafts
        .into_iter()
        .zip(allocations)
        .enumerate()
        .map(
            |(index, ((new_classes, repeated_classes, counts), sample_counts))| TaskSpec {
                index,
                new_classes,
                repeated_classes,
                sample_counts,
                alpha: counts.alpha,
                beta: counts.beta,
            },
        )
        .collect();

    Ok(Scenario {
        version: SCENARIO_FORMAT_VERSION,
        seed: config.rng_seed,
        total_classes: config.total_classes,
        class_cap: config.class_cap,
        budgets,
        tasks,
    })
}

/// Which property a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// Task width bounds and per-task novelty.
    Characteristic1,
    /// Unequal sample sizes within a task.
    Characteristic2,
    /// Class overlap across tasks.
    Characteristic3,
    Conservation,
    Structure,
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Property::Characteristic1 => "Characteristic 1",
            Property::Characteristic2 => "Characteristic 2",
            Property::Characteristic3 => "Characteristic 3",
            Property::Conservation => "conservation",
            Property::Structure => "structure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub property: Property,
    pub task: Option<usize>,
    pub class: Option<ClassId>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.property)?;
        if let Some(t) = self.task {
            write!(f, ", task {t}")?;
        }
        if let Some(c) = self.class {
            write!(f, ", class {c}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = s.total_classes as usize;
    let mut violation = |property, task, class, message: String| {
        report.violations.push(Violation {
            property,
            task,
            class,
            message,
        })
    };

    let mut seen: BTreeSet<ClassId> = BTreeSet::new();
    let mut totals: BTreeMap<ClassId, u64> = BTreeMap::new();
    for (pos, task) in s.tasks.iter().enumerate() {
        let i = Some(pos);
        if task.index != pos {
            violation(
                Property::Structure,
                i,
                None,
                format!("task index {} at position {pos}", task.index),
            );
        }
        let k = task.num_classes();
        if k < 1 || k >= n {
            violation(
                Property::Characteristic1,
                i,
                None,
                format!("task has {k} classes, expected 1 <= K < {n}"),
            );
        }
        let new: BTreeSet<ClassId> = task.new_classes.iter().copied().collect();
        let rep: BTreeSet<ClassId> = task.repeated_classes.iter().copied().collect();
        if new.len() != task.new_classes.len() || rep.len() != task.repeated_classes.len() {
            violation(Property::Structure, i, None, "duplicate class ids".into());
        }
        if new.is_empty() {
            violation(
                Property::Characteristic1,
                i,
                None,
                "task introduces no new class".into(),
            );
        }
        for &c in &new {
            if seen.contains(&c) {
                violation(
                    Property::Characteristic1,
                    i,
                    Some(c),
                    "class listed as new was seen in an earlier task".into(),
                );
            }
        }
        for &c in &rep {
            if !seen.contains(&c) {
                violation(
                    Property::Structure,
                    i,
                    Some(c),
                    "repeated class was never introduced".into(),
                );
            }
        }
        if new.intersection(&rep).next().is_some() {
            violation(
                Property::Structure,
                i,
                None,
                "new and repeated classes overlap".into(),
            );
        }
        let listed: BTreeSet<ClassId> = new.union(&rep).copied().collect();
        let counted: BTreeSet<ClassId> = task.sample_counts.keys().copied().collect();
        if listed != counted {
            violation(
                Property::Structure,
                i,
                None,
                "sample_counts keys differ from the task's classes".into(),
            );
        }
        for (&c, &count) in &task.sample_counts {
            if c as usize >= n {
                violation(
                    Property::Structure,
                    i,
                    Some(c),
                    format!("class id outside catalog of {n}"),
                );
            }
            if count == 0 {
                violation(
                    Property::Structure,
                    i,
                    Some(c),
                    "class appears with zero samples".into(),
                );
            }
            *totals.entry(c).or_default() += count;
        }
        seen.extend(new);
    }

    if let Some(cap) = s.class_cap {
        if seen.len() > cap as usize {
            violation(
                Property::Characteristic1,
                None,
                None,
                format!("{} classes introduced, cap is {cap}", seen.len()),
            );
        }
    }

    for (&c, &total) in &totals {
        match s.budgets.get(c as usize) {
            Some(&budget) if budget == total => {}
            Some(&budget) => violation(
                Property::Conservation,
                None,
                Some(c),
                format!("allocated {total} samples, budget is {budget}"),
            ),
            None => violation(
                Property::Conservation,
                None,
                Some(c),
                "class has no budget entry".into(),
            ),
        }
    }

    let any_wide = s.tasks.iter().any(|t| t.num_classes() > 1);
    let any_unequal = s.tasks.iter().any(|t| {
        let mut counts = t.sample_counts.values();
        let first = counts.next();
        counts.any(|c| Some(c) != first)
    });
    if any_wide && !any_unequal {
        report.warnings.push(Violation {
            property: Property::Characteristic2,
            task: None,
            class: None,
            message: "no task carries unequal class sample sizes".into(),
        });
    }
    if s.tasks.len() > 1 && s.tasks.iter().all(|t| t.repeated_classes.is_empty()) {
        report.warnings.push(Violation {
            property: Property::Characteristic3,
            task: None,
            class: None,
            message: "no class recurs across tasks".into(),
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn degenerate(n: u32, t: u32) -> ScenarioConfig {
        ScenarioConfig {
            alpha_set: vec![1],
            beta_set: vec![1],
            class_count_distribution: ClassCountDistribution::Fixed { value: 1.0 },
            ..ScenarioConfig::preset(Category::Custom, n, t, 0)
        }
    }

    #[test]
    fn first_task_never_repeats() {
        let cfg = ScenarioConfig::preset(Category::ShortTerm, 101, 10, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let c = sample_class_counts(&cfg, 0, 0, None, &mut rng).unwrap();
            assert_eq!(c.repeat, 0);
            assert!(c.new >= 1);
        }
    }

    #[test]
    fn degenerate_distribution_forces_parameters() {
        let cfg = degenerate(20, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for introduced in 0..4 {
            let c = sample_class_counts(&cfg, introduced, introduced, None, &mut rng).unwrap();
            assert_eq!(c.new, 1);
            assert_eq!(c.repeat, introduced.min(1));
        }
    }

    #[test]
    fn new_count_reserves_classes_for_later_tasks() {
        let cfg = ScenarioConfig {
            class_count_distribution: ClassCountDistribution::Fixed { value: 100.0 },
            class_cap: Some(12),
            ..ScenarioConfig::preset(Category::Custom, 20, 10, 0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = sample_class_counts(&cfg, 0, 0, None, &mut rng).unwrap();
        assert_eq!(c.new, 3);
    }

    #[test]
    fn imbalance_factor_examples() {
        assert!((imbalance_factor(101, 40, 5).unwrap() - 12.2).abs() < 1e-12);
        assert_eq!(imbalance_factor(74, 74, 3).unwrap(), 0.0);
        assert_eq!(imbalance_factor(101, 0, 1).unwrap(), 101.0);
        assert!(imbalance_factor(10, 3, 0).is_err());
        assert!(imbalance_factor(10, 11, 1).is_err());
    }

    #[test]
    fn appearance_rejects_zero_new() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let catalog: Vec<ClassId> = (0..5).collect();
        assert!(sample_appearance(0, 0, &catalog, &BTreeSet::new(), None, &mut rng).is_err());
    }

    #[test]
    fn appearance_forced_full_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let catalog: Vec<ClassId> = (0..6).collect();
        let introduced: BTreeSet<ClassId> = [1, 2, 3].into();
        let (new, rep) = sample_appearance(1, 3, &catalog, &introduced, None, &mut rng).unwrap();
        assert_eq!(rep, vec![1, 2, 3]);
        assert!(new[0] == 0 || new[0] >= 4);
    }

    #[test]
    fn appearance_pool_exhaustion_names_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let catalog: Vec<ClassId> = (0..4).collect();
        let introduced: BTreeSet<ClassId> = [0, 1].into();
        match sample_appearance(1, 3, &catalog, &introduced, None, &mut rng) {
            Err(Error::PoolExhausted { pool, .. }) => assert_eq!(pool, "introduced"),
            other => panic!("unexpected {other:?}"),
        }
        match sample_appearance(3, 0, &catalog, &introduced, None, &mut rng) {
            Err(Error::PoolExhausted { pool, .. }) => assert_eq!(pool, "unintroduced"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn appearance_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let catalog: Vec<ClassId> = (0..5).collect();
        let mut hits = [0u32; 5];
        let trials = 10_000;
        for _ in 0..trials {
            let (new, _) =
                sample_appearance(2, 0, &catalog, &BTreeSet::new(), None, &mut rng).unwrap();
            for c in new {
                hits[c as usize] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - 0.4).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn weighted_appearance_skips_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let catalog: Vec<ClassId> = (0..4).collect();
        let w = [0.0, 1.0, 0.0, 1.0];
        for _ in 0..50 {
            let (new, _) =
                sample_appearance(2, 0, &catalog, &BTreeSet::new(), Some(&w), &mut rng).unwrap();
            assert_eq!(new, vec![1, 3]);
        }
    }

    #[test]
    fn allocation_examples() {
        let tasks: Vec<Vec<ClassId>> = (0..10)
            .map(|i| if i % 2 == 0 { vec![5] } else { vec![] })
            .collect();
        let mut budgets = vec![0; 6];
        budgets[5] = 500;
        let alloc = allocate_samples(&tasks, &budgets).unwrap();
        let got: Vec<u64> = alloc.iter().filter_map(|m| m.get(&5).copied()).collect();
        assert_eq!(got, vec![100; 5]);

        budgets[5] = 502;
        let alloc = allocate_samples(&tasks, &budgets).unwrap();
        let got: Vec<u64> = alloc.iter().filter_map(|m| m.get(&5).copied()).collect();
        assert_eq!(got, vec![102, 100, 100, 100, 100]);

        budgets[5] = 3;
        assert!(matches!(
            allocate_samples(&tasks, &budgets),
            Err(Error::InsufficientBudget { class: 5, .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ScenarioConfig::preset(Category::ModerateTerm, 101, 10, 7);
        let a = build_scenario(&cfg).unwrap().to_json().unwrap();
        let b = build_scenario(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_tasks_rejected() {
        let cfg = ScenarioConfig::preset(Category::Custom, 4, 5, 0);
        assert!(matches!(build_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn short_term_vfn_range() {
        let cfg = ScenarioConfig::preset(Category::ShortTerm, 74, 10, 7);
        let s = build_scenario(&cfg).unwrap();
        let k = s.introduced_classes().len();
        assert!((10..=30).contains(&k), "{k} classes");
        assert!(validate_scenario(&s).is_valid());
    }

    #[test]
    fn per_run_hyperparameters_are_constant() {
        let cfg = ScenarioConfig {
            hyperparameter_mode: HyperparameterMode::PerRun,
            ..ScenarioConfig::preset(Category::LongTerm, 101, 10, 4)
        };
        let s = build_scenario(&cfg).unwrap();
        assert!(s
            .tasks
            .iter()
            .all(|t| (t.alpha, t.beta) == (s.tasks[0].alpha, s.tasks[0].beta)));
    }

    fn hand_built() -> Scenario {
        let task =
            |index, new: Vec<ClassId>, repeat: Vec<ClassId>, counts: &[(ClassId, u64)]| TaskSpec {
                index,
                new_classes: new,
                repeated_classes: repeat,
                sample_counts: counts.iter().copied().collect(),
                alpha: 1,
                beta: 1,
            };
        Scenario {
            version: SCENARIO_FORMAT_VERSION,
            seed: 0,
            total_classes: 6,
            class_cap: None,
            budgets: vec![10; 6],
            tasks: vec![
                task(0, vec![0, 1], vec![], &[(0, 5), (1, 10)]),
                task(1, vec![2], vec![0], &[(0, 3), (2, 6)]),
                task(2, vec![3], vec![], &[(3, 4)]),
                task(3, vec![], vec![2], &[(2, 4)]),
            ],
        }
    }

    #[test]
    fn repeat_only_task_is_flagged() {
        let mut s = hand_built();
        s.budgets[3] = 4;
        s.tasks[1].sample_counts.insert(0, 5);
        let report = validate_scenario(&s);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        let v = &report.violations[0];
        assert_eq!(v.property, Property::Characteristic1);
        assert_eq!(v.task, Some(3));
        assert!(v.to_string().starts_with("Characteristic 1, task 3"));
    }

    #[test]
    fn budget_mismatch_is_flagged() {
        let report = validate_scenario(&hand_built());
        let conservation: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.property == Property::Conservation)
            .collect();
        // class 0: 5 + 3 of 10, class 3: 4 of 10
        assert_eq!(conservation.len(), 2);
    }

    #[test]
    fn equal_counts_warn_without_violation() {
        let cfg = ScenarioConfig {
            samples_per_class: SampleBudget::Uniform(60),
            ..degenerate(10, 1)
        };
        let s = build_scenario(&cfg).unwrap();
        let report = validate_scenario(&s);
        assert!(report.is_valid());
    }
}
