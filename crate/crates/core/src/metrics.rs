//! Accuracy matrix over held-out task test sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::learner::{ncm_predict, ClassifierState};
use crate::scenario::Scenario;
use crate::stream::{Dataset, LabeledVector};
use crate::{ClassId, Error, Result};

pub const DEFAULT_TEST_PER_CLASS: usize = 20;

/// Balanced held-out samples of every class of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub task: usize,
    pub samples: Vec<LabeledVector>,
}

/// One test set per task holding `per_class` test samples of each class in
/// the task (all of them when `None`). Classes with fewer test samples than
/// requested are a data error, so the sets stay balanced.
pub fn build_test_sets(
    scenario: &Scenario,
    dataset: &Dataset,
    per_class: Option<usize>,
) -> Result<Vec<TestSet>> {
    scenario
        .tasks
        .iter()
        .map(|task| {
            let mut samples = Vec::new();
            for c in task.classes() {
                let pool = &dataset
                    .classes
                    .get(c as usize)
                    .ok_or_else(|| Error::Data(format!("class {c} missing from dataset")))?
                    .test;
                let take = per_class.unwrap_or(pool.len());
                if pool.len() < take {
                    return Err(Error::Data(format!(
                        "class {c} has {} test samples, {take} requested",
                        pool.len()
                    )));
                }
                samples.extend_from_slice(&pool[..take]);
            }
            Ok(TestSet {
                task: task.index,
                samples,
            })
        })
        .collect()
}

/// How test samples are classified.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Argmax(&'a ClassifierState),
    NearestMean(&'a BTreeMap<ClassId, Vec<f64>>),
}

impl Predictor<'_> {
    pub fn predict(&self, batch: &[LabeledVector]) -> Result<Vec<ClassId>> {
        match self {
            Predictor::Argmax(state) => state.predict(batch),
            Predictor::NearestMean(means) => ncm_predict(means, batch),
        }
    }

    pub fn accuracy(&self, samples: &[LabeledVector]) -> Result<f64> {
        let predicted = self.predict(samples)?;
        let correct = predicted
            .iter()
            .zip(samples)
            .filter(|(p, x)| **p == x.label)
            .count();
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// Accuracy on every task's test set.
pub fn evaluate_row(predictor: Predictor<'_>, test_sets: &[TestSet]) -> Result<Vec<f64>> {
    test_sets
        .iter()
        .map(|set| {
            if set.samples.is_empty() {
                return Err(Error::EmptyTestSet(set.task));
            }
            predictor.accuracy(&set.samples)
        })
        .collect()
}

/// `B[i][j]`: accuracy on task `j` after training through task `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    rows: Vec<Option<Vec<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        AccuracyMatrix {
            num_tasks,
            rows: vec![None; num_tasks],
        }
    }

    /// A matrix with every row filled.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            m.set_row(i, row)?;
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn set_row(&mut self, i: usize, row: Vec<f64>) -> Result<()> {
        if i >= self.num_tasks || row.len() != self.num_tasks {
            return Err(Error::DimensionMismatch {
                expected: self.num_tasks,
                got: row.len().max(i + 1),
            });
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows[i] = Some(row);
        Ok(())
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i).and_then(|r| r.as_deref())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.row(i).and_then(|r| r.get(j).copied())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    /// Mean of the final row.
    pub fn average_accuracy(&self) -> Result<f64> {
        if !self.is_complete() || self.num_tasks == 0 {
            return Err(Error::IncompleteMatrix);
        }
        let last = self.row(self.num_tasks - 1).expect("complete");
        Ok(last.iter().sum::<f64>() / self.num_tasks as f64)
    }

    /// `after_task,task_0,...` rows; unfilled rows are skipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for j in 0..self.num_tasks {
            let _ = write!(out, ",task_{j}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(row) = row {
                let _ = write!(out, "{i}");
                for v in row {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}
