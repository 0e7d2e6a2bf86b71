use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, Method, PriorUpdate, RunConfig, UpdateSource};
use crate::buffer::{ExemplarBuffer, ReplayStrategy};
use crate::dmu::{Branch, BranchRecord, DmuState};
use crate::learner::{Architecture, ClassifierState};
use crate::metrics::{build_test_sets, evaluate_row, AccuracyMatrix, Predictor, TestSet};
use crate::rng::{stream_for, Purpose, RunRng};
use crate::scenario::{build_scenario, validate_scenario, Scenario};
use crate::stream::{materialize_stream, Dataset, LabeledVector, SampleId, TaskStream};
use crate::{Error, Result};

pub const RESULTS_VERSION: u32 = 1;
const CHECKPOINT_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.json";
pub const BRANCH_LOG_FILE: &str = "branch_log.csv";
pub const MATRIX_FILE: &str = "accuracy_matrix.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const SCENARIO_FILE: &str = "scenario.json";

/// Everything a results file records about one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub scenario_seed: u64,
    pub method: Method,
    pub dmu: bool,
    pub category: crate::scenario::Category,
    pub num_tasks: u32,
    pub distribution: String,
    pub buffer_capacity: usize,
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub average_accuracy: f64,
    /// Test accuracy per task of the untrained model.
    pub random_init_accuracy: Vec<f64>,
    pub threshold: Option<f64>,
    pub gated_steps: usize,
    pub novel_steps: usize,
    pub incoming_trained: u64,
    pub incoming_dropped: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_log: Option<String>,
}

impl RunResults {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One point of an intra-task accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub task: usize,
    pub mean_seen_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: RunResults,
    pub scenario: Scenario,
    pub matrix: AccuracyMatrix,
    pub branch_log: Vec<BranchRecord>,
    pub curve: Vec<CurvePoint>,
    pub state: ClassifierState,
    pub buffer: ExemplarBuffer,
}

impl RunOutcome {
    /// Writes results, matrix CSV, scenario and (for gated runs) the branch
    /// log into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write(RESULTS_FILE, serde_json::to_string_pretty(&self.results)?)?;
        write(MATRIX_FILE, self.matrix.to_csv())?;
        write(SCENARIO_FILE, self.scenario.to_json()?)?;
        if self.results.dmu {
            let mut csv = Vec::new();
            crate::dmu::write_branch_log(&self.branch_log, &mut csv)
                .expect("writing to a Vec cannot fail");
            write(BRANCH_LOG_FILE, String::from_utf8(csv).expect("ascii"))?;
        }
        if !self.curve.is_empty() {
            let mut text = String::from("step,task,mean_seen_accuracy\n");
            for p in &self.curve {
                text.push_str(&format!("{},{},{}\n", p.step, p.task, p.mean_seen_accuracy));
            }
            write(CURVE_FILE, text)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Rngs {
    retrieval: RunRng,
    update: RunRng,
    branch: RunRng,
}

/// Mid-run state sufficient to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    config_hash: String,
    next_task: usize,
    step: u64,
    state: ClassifierState,
    buffer: ExemplarBuffer,
    dmu: DmuState,
    rngs: Rngs,
    matrix: AccuracyMatrix,
    random_init_accuracy: Vec<f64>,
    trained_ids: BTreeSet<SampleId>,
    incoming_dropped: u64,
    curve: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn next_task(&self) -> usize {
        self.next_task
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        Ok(cp)
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Manifest { path } => Dataset::load(path),
        DatasetSource::Synthetic(spec) => Ok(spec.generate()),
    }
}

/// A run in progress. Tasks are processed strictly in order.
pub struct Experiment {
    cfg: RunConfig,
    config_hash: String,
    scenario: Scenario,
    streams: Vec<TaskStream>,
    test_sets: Vec<TestSet>,
    strategy: Option<ReplayStrategy>,
    state: ClassifierState,
    buffer: ExemplarBuffer,
    dmu: DmuState,
    rngs: Rngs,
    matrix: AccuracyMatrix,
    random_init_accuracy: Vec<f64>,
    next_task: usize,
    step: u64,
    trained_ids: BTreeSet<SampleId>,
    incoming_dropped: u64,
    curve: Vec<CurvePoint>,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = load_dataset(&cfg.dataset)?;
        let scenario = match &cfg.scenario.file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Scenario::from_json(&text)?
            }
            None => {
                let sc = cfg.scenario.resolve(
                    dataset.num_classes() as u32,
                    dataset.train_counts(),
                    cfg.seed,
                );
                build_scenario(&sc)?
            }
        };
        let report = validate_scenario(&scenario);
        if let Some(v) = report.violations.first() {
            return Err(Error::Data(format!("invalid scenario: {v}")));
        }
        let streams = materialize_stream(
            &scenario,
            &dataset,
            cfg.batch_size,
            &mut stream_for(cfg.seed, Purpose::Stream),
        )?;
        let test_sets = build_test_sets(&scenario, &dataset, Some(cfg.test_per_class))?;

        let arch = Architecture {
            input_dim: dataset.feature_dim,
            hidden_dim: (cfg.hidden_dim > 0).then_some(cfg.hidden_dim),
            num_classes: scenario.total_classes as usize,
        };
        let state = ClassifierState::init(arch, &mut stream_for(cfg.seed, Purpose::Init));
        let random_init_accuracy = evaluate_row(Predictor::Argmax(&state), &test_sets)?;
        let t = scenario.tasks.len();
        Ok(Experiment {
            config_hash: cfg.hash(),
            strategy: cfg.strategy(),
            buffer: ExemplarBuffer::new(cfg.buffer_capacity),
            rngs: Rngs {
                retrieval: stream_for(cfg.seed, Purpose::Retrieval),
                update: stream_for(cfg.seed, Purpose::BufferUpdate),
                branch: stream_for(cfg.seed, Purpose::Branch),
            },
            cfg,
            scenario,
            streams,
            test_sets,
            state,
            dmu: DmuState::new(),
            matrix: AccuracyMatrix::new(t),
            random_init_accuracy,
            next_task: 0,
            step: 0,
            trained_ids: BTreeSet::new(),
            incoming_dropped: 0,
            curve: Vec::new(),
        })
    }

    /// Rebuilds the run from its configuration and continues from `cp`.
    pub fn resume(cfg: RunConfig, cp: Checkpoint) -> Result<Self> {
        let mut exp = Experiment::new(cfg)?;
        if cp.config_hash != exp.config_hash {
            return Err(Error::Config(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        exp.next_task = cp.next_task;
        exp.step = cp.step;
        exp.state = cp.state;
        exp.buffer = cp.buffer;
        exp.dmu = cp.dmu;
        exp.rngs = cp.rngs;
        exp.matrix = cp.matrix;
        exp.random_init_accuracy = cp.random_init_accuracy;
        exp.trained_ids = cp.trained_ids;
        exp.incoming_dropped = cp.incoming_dropped;
        exp.curve = cp.curve;
        Ok(exp)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            next_task: self.next_task,
            step: self.step,
            state: self.state.clone(),
            buffer: self.buffer.clone(),
            dmu: self.dmu.clone(),
            rngs: self.rngs.clone(),
            matrix: self.matrix.clone(),
            random_init_accuracy: self.random_init_accuracy.clone(),
            trained_ids: self.trained_ids.clone(),
            incoming_dropped: self.incoming_dropped,
            curve: self.curve.clone(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &ClassifierState {
        &self.state
    }

    pub fn buffer(&self) -> &ExemplarBuffer {
        &self.buffer
    }

    pub fn dmu(&self) -> &DmuState {
        &self.dmu
    }

    pub fn is_finished(&self) -> bool {
        self.next_task >= self.streams.len()
    }

    fn predictor_row(&self) -> Result<Vec<f64>> {
        match self.cfg.method {
            Method::ErRandomNcm => {
                let means = self.buffer.class_means();
                if means.is_empty() {
                    Ok(vec![0.0; self.test_sets.len()])
                } else {
                    evaluate_row(Predictor::NearestMean(&means), &self.test_sets)
                }
            }
            _ => evaluate_row(Predictor::Argmax(&self.state), &self.test_sets),
        }
    }

    fn train_batch(&mut self, task: usize, batch: &[LabeledVector]) -> Result<()> {
        let Experiment {
            cfg,
            strategy,
            state,
            buffer,
            dmu,
            rngs,
            step,
            trained_ids,
            incoming_dropped,
            ..
        } = self;
        let k = cfg.retrieval_size();

        let exemplars = match strategy {
            Some(s) => s.retrieve(buffer, k, batch, state, &cfg.sgd, &mut rngs.retrieval)?,
            None => Vec::new(),
        };
        let (data, exemplars) = if cfg.dmu && task > 0 {
            let branch_rng = &mut rngs.branch;
            let decision = dmu.gate(
                batch,
                exemplars,
                state,
                |novel| match strategy {
                    Some(s) => s.retrieve(buffer, k, novel, state, &cfg.sgd, branch_rng),
                    None => Ok(Vec::new()),
                },
                *step,
                task,
            )?;
            if decision.chosen == Branch::Novel {
                *incoming_dropped += (batch.len() - decision.data.len()) as u64;
            }
            (decision.data, decision.exemplars)
        } else {
            (batch.to_vec(), exemplars)
        };

        for x in &data {
            if !trained_ids.insert(x.id) {
                return Err(Error::Data(format!(
                    "sample {:?} reached a training step twice",
                    x.id
                )));
            }
        }
        let mut train: Vec<LabeledVector> = Vec::with_capacity(data.len() + exemplars.len());
        train.extend_from_slice(&data);
        train.extend(exemplars);
        if !train.is_empty() {
            let (_, grads) = state.loss_and_grads(&train)?;
            state.sgd_step(&grads, &cfg.sgd)?;
        }

        if let Some(s) = strategy {
            let source: &[LabeledVector] = match cfg.buffer_update_source {
                UpdateSource::Gated => &data,
                UpdateSource::Full => batch,
            };
            s.update(buffer, source, state, &mut rngs.update)?;
        }
        if cfg.prior_update == PriorUpdate::Batch {
            dmu.observe_labels(batch);
        }
        *step += 1;
        Ok(())
    }

    /// Trains the next task and fills its accuracy-matrix row.
    pub fn run_task(&mut self) -> Result<()> {
        let task = self.next_task;
        let stream = self
            .streams
            .get(task)
            .cloned()
            .ok_or_else(|| Error::Config("run already finished".into()))?;
        for (b, batch) in stream.batches.iter().enumerate() {
            self.train_batch(task, batch)
                .map_err(|e| e.in_batch(task, b))?;
            if self.cfg.curve_every > 0 && (b + 1) % self.cfg.curve_every == 0 {
                let row = self.predictor_row()?;
                let seen = &row[..=task];
                self.curve.push(CurvePoint {
                    step: self.step,
                    task,
                    mean_seen_accuracy: seen.iter().sum::<f64>() / seen.len() as f64,
                });
            }
        }
        if self.cfg.prior_update == PriorUpdate::Task {
            self.dmu.observe_labels(&stream.batches.concat());
        }
        let row = self.predictor_row().map_err(|e| e.in_task(task))?;
        if task == 0 && self.cfg.dmu {
            self.dmu.set_threshold(row[0])?;
        }
        self.matrix.set_row(task, row)?;
        self.next_task += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<RunOutcome> {
        if !self.is_finished() {
            return Err(Error::IncompleteMatrix);
        }
        let rows: Vec<Vec<f64>> = (0..self.matrix.num_tasks())
            .map(|i| self.matrix.row(i).expect("complete").to_vec())
            .collect();
        let novel_steps = self
            .dmu
            .branch_log
            .iter()
            .filter(|r| r.chosen == Branch::Novel)
            .count();
        let results = RunResults {
            version: RESULTS_VERSION,
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            scenario_seed: self.scenario.seed,
            method: self.cfg.method,
            dmu: self.cfg.dmu,
            category: self.cfg.scenario.category,
            num_tasks: self.scenario.tasks.len() as u32,
            distribution: self
                .cfg
                .scenario
                .class_count_distribution
                .short_name()
                .to_string(),
            buffer_capacity: self.cfg.buffer_capacity,
            average_accuracy: self.matrix.average_accuracy()?,
            accuracy_matrix: rows,
            random_init_accuracy: self.random_init_accuracy.clone(),
            threshold: self.dmu.threshold(),
            gated_steps: self.dmu.branch_log.len(),
            novel_steps,
            incoming_trained: self.trained_ids.len() as u64,
            incoming_dropped: self.incoming_dropped,
            branch_log: self.cfg.dmu.then(|| BRANCH_LOG_FILE.to_string()),
        };
        Ok(RunOutcome {
            results,
            scenario: self.scenario,
            matrix: self.matrix,
            branch_log: self.dmu.branch_log,
            curve: self.curve,
            state: self.state,
            buffer: self.buffer,
        })
    }

    /// Runs every remaining task, writing per-task checkpoints when enabled.
    pub fn run_to_end(mut self) -> Result<RunOutcome> {
        let checkpoint_dir: Option<PathBuf> = match (&self.cfg.output_dir, self.cfg.checkpoint) {
            (Some(dir), true) => Some(dir.join("checkpoints")),
            _ => None,
        };
        if let Some(dir) = &checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while !self.is_finished() {
            self.run_task()?;
            if let Some(dir) = &checkpoint_dir {
                let path = dir.join(format!("after_task_{}.json", self.next_task - 1));
                self.checkpoint().save(&path)?;
            }
        }
        let outcome = self.finish()?;
        if let Some(dir) = &checkpoint_dir {
            outcome.state.save_json(&dir.join("learner.json"))?;
        }
        Ok(outcome)
    }
}

/// Runs a configuration from start to end and, when `output_dir` is set,
/// writes its outputs there.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let outcome = Experiment::new(cfg.clone())?.run_to_end()?;
    if let Some(dir) = &cfg.output_dir {
        outcome.write_to(dir)?;
    }
    Ok(outcome)
}
