//! Single-pass online streams.
//!
//! [`materialize_stream`] draws, for every `(task, class)` pair of a
//! [`Scenario`], the scheduled number of samples from that class's remaining
//! pool, shuffles them within the task and cuts them into mini-batches. No
//! sample is emitted twice over a run.

mod dataset;
mod import;
mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{ClassSamples, Dataset, RawClass, MANIFEST_FILE};
pub use import::{featurize, import_image_folder, ImportOptions};
pub use synthetic::SyntheticSpec;

use crate::scenario::Scenario;
use crate::{ClassId, Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 16;

/// Stable sample identifier, unique across the train and test splits of a
/// dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

/// Bit set on test-split ids so they never collide with training ids.
pub const TEST_ID_FLAG: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub label: ClassId,
}

impl LabeledVector {
    pub fn new(id: u64, features: Vec<f64>, label: ClassId) -> Self {
        LabeledVector {
            id: SampleId(id),
            features,
            label,
        }
    }
}

pub type Batch = Vec<LabeledVector>;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub task_index: usize,
    pub batch_size: usize,
    pub batches: Vec<Batch>,
}

impl TaskStream {
    pub fn samples(&self) -> impl Iterator<Item = &LabeledVector> {
        self.batches.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

pub fn materialize_stream<R: Rng + ?Sized>(
    scenario: &Scenario,
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<TaskStream>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if scenario.total_classes as usize > dataset.classes.len() {
        return Err(Error::Data(format!(
            "scenario uses {} classes, dataset has {}",
            scenario.total_classes,
            dataset.classes.len()
        )));
    }
    let mut needed = vec![0u64; dataset.classes.len()];
    for task in &scenario.tasks {
        for (&c, &n) in &task.sample_counts {
            needed[c as usize] += n;
        }
    }
    for (c, &n) in needed.iter().enumerate() {
        let available = dataset.classes[c].train.len() as u64;
        if n > available {
            return Err(Error::InsufficientSamples {
                class: c as ClassId,
                shortfall: n - available,
            });
        }
    }

    let mut pools: Vec<Vec<usize>> = dataset
        .classes
        .iter()
        .map(|class| {
            let mut order: Vec<usize> = (0..class.train.len()).collect();
            order.shuffle(rng);
            order
        })
        .collect();

    let mut streams = Vec::with_capacity(scenario.tasks.len());
    for task in &scenario.tasks {
        let mut samples: Vec<LabeledVector> = Vec::with_capacity(task.num_samples() as usize);
        for (&c, &n) in &task.sample_counts {
            let pool = &mut pools[c as usize];
            let taken = pool.split_off(pool.len() - n as usize);
            // split_off takes from the tail; reverse keeps draw order stable
            samples.extend(
                taken
                    .into_iter()
                    .rev()
                    .map(|j| dataset.classes[c as usize].train[j].clone()),
            );
        }
        samples.shuffle(rng);
        let batches = samples.chunks(batch_size).map(<[_]>::to_vec).collect();
        streams.push(TaskStream {
            task_index: task.index,
            batch_size,
            batches,
        });
    }
    Ok(streams)
}
