//! Dynamic model update.
//!
//! For every incoming batch after the first task, two frozen copies of the
//! learner are scored:
//!
//! - the *full* branch on the whole batch plus the exemplars retrieved for it;
//! - the *novel* branch on only the samples whose label is absent from the
//!   prior label set, plus exemplars retrieved for that subset.
//!
//! Branches whose accuracy exceeds the threshold (the accuracy reached after
//! the first task) are eligible; the more accurate eligible branch decides
//! what the real training step sees. Equal eligible branches prefer the novel
//! one, and when neither is eligible the full batch is used.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::learner::ClassifierState;
use crate::stream::LabeledVector;
use crate::{ClassId, Error, Result};

/// Labels observed so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorDistribution {
    seen_labels: BTreeSet<ClassId>,
}

impl PriorDistribution {
    pub fn contains(&self, label: ClassId) -> bool {
        self.seen_labels.contains(&label)
    }

    pub fn labels(&self) -> &BTreeSet<ClassId> {
        &self.seen_labels
    }

    pub fn observe(&mut self, labels: impl IntoIterator<Item = ClassId>) {
        self.seen_labels.extend(labels);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Whole batch (first virtual model).
    Full,
    /// Novel-label part only (second virtual model).
    Novel,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Full => "vm1",
            Branch::Novel => "vm2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub step: u64,
    pub task: usize,
    pub acc_vm1: f64,
    pub acc_vm2: f64,
    pub threshold: f64,
    pub chosen: Branch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DmuState {
    threshold: Option<f64>,
    pub prior: PriorDistribution,
    pub branch_log: Vec<BranchRecord>,
}

/// Data the real training step should use.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub data: Vec<LabeledVector>,
    pub exemplars: Vec<LabeledVector>,
    pub chosen: Branch,
    pub acc_vm1: f64,
    pub acc_vm2: f64,
}

/// Splits a batch into `(repeated, novel)` by membership of the label in
/// `prior`, preserving order in both parts.
pub fn split_batch(
    batch: &[LabeledVector],
    prior: &PriorDistribution,
) -> (Vec<LabeledVector>, Vec<LabeledVector>) {
    batch.iter().cloned().partition(|x| prior.contains(x.label))
}

/// Fraction of `data ++ exemplars` the frozen model classifies correctly by
/// argmax; 0 when both are empty.
pub fn eval_branch(
    vm: &ClassifierState,
    data: &[LabeledVector],
    exemplars: &[LabeledVector],
) -> Result<f64> {
    let total = data.len() + exemplars.len();
    if total == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for part in [data, exemplars] {
        if part.is_empty() {
            continue;
        }
        let predicted = vm.predict(part)?;
        correct += predicted
            .iter()
            .zip(part)
            .filter(|(p, x)| **p == x.label)
            .count();
    }
    Ok(correct as f64 / total as f64)
}

/// Branch selection rule.
pub fn select_branch(acc_vm1: f64, acc_vm2: f64, threshold: f64) -> Branch {
    match (acc_vm1 > threshold, acc_vm2 > threshold) {
        (true, true) if acc_vm2 >= acc_vm1 => Branch::Novel,
        (true, _) => Branch::Full,
        (false, true) => Branch::Novel,
        (false, false) => Branch::Full,
    }
}

impl DmuState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// Fixes the threshold to the accuracy reached after the first task.
    pub fn set_threshold(&mut self, first_task_accuracy: f64) -> Result<()> {
        if self.threshold.is_some() {
            return Err(Error::ThresholdAlreadySet);
        }
        if !(0.0..=1.0).contains(&first_task_accuracy) {
            return Err(Error::InvalidThreshold(first_task_accuracy));
        }
        self.threshold = Some(first_task_accuracy);
        Ok(())
    }

    /// Adds the batch labels to the prior. Call after gating the batch.
    pub fn observe_labels(&mut self, batch: &[LabeledVector]) {
        self.prior.observe(batch.iter().map(|x| x.label));
    }

    /// Gates one batch.
    ///
    /// `exemplars_full` are the exemplars already retrieved for the whole
    /// batch; `retrieve_novel` is called with the novel split to fetch that
    /// branch's exemplars and is skipped when the split is empty.
    pub fn gate<F>(
        &mut self,
        batch: &[LabeledVector],
        exemplars_full: Vec<LabeledVector>,
        state: &ClassifierState,
        mut retrieve_novel: F,
        step: u64,
        task: usize,
    ) -> Result<GateDecision>
    where
        F: FnMut(&[LabeledVector]) -> Result<Vec<LabeledVector>>,
    {
        let threshold = self
            .threshold
            .ok_or_else(|| Error::Config("gating requires the threshold to be set".into()))?;
        let (_, novel) = split_batch(batch, &self.prior);

        let vm1 = state.clone_frozen();
        let acc_vm1 = eval_branch(&vm1, batch, &exemplars_full)?;

        let (exemplars_novel, acc_vm2) = if novel.is_empty() {
            (Vec::new(), 0.0)
        } else {
            let vm2 = state.clone_frozen();
            let ex = retrieve_novel(&novel)?;
            let acc = eval_branch(&vm2, &novel, &ex)?;
            (ex, acc)
        };

        let chosen = select_branch(acc_vm1, acc_vm2, threshold);
        self.branch_log.push(BranchRecord {
            step,
            task,
            acc_vm1,
            acc_vm2,
            threshold,
            chosen,
        });
        let (data, exemplars) = match chosen {
            Branch::Full => (batch.to_vec(), exemplars_full),
            Branch::Novel => (novel, exemplars_novel),
        };
        Ok(GateDecision {
            data,
            exemplars,
            chosen,
            acc_vm1,
            acc_vm2,
        })
    }

    /// Writes the branch log as `step,task,acc_vm1,acc_vm2,TH,chosen`.
    pub fn write_branch_log<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_branch_log(&self.branch_log, w)
    }

    pub fn save_branch_log(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_branch_log(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// `step,task,acc_vm1,acc_vm2,TH,chosen` rows.
pub fn write_branch_log<W: Write>(records: &[BranchRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,task,acc_vm1,acc_vm2,TH,chosen")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.task, r.acc_vm1, r.acc_vm2, r.threshold, r.chosen
        )?;
    }
    Ok(())
}
