//! Exemplar memory for experience replay.
//!
//! The buffer is filled by one of two update rules (reservoir sampling or
//! greedy gradient-diversity selection) and read by one of two retrieval
//! rules (uniform or maximally interfered). [`ReplayStrategy`] bundles the
//! combinations used by the replay methods of the harness.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learner::{ClassifierState, SgdConfig};
use crate::stream::{LabeledVector, SampleId};
use crate::{ClassId, Result};

pub const DEFAULT_MIR_CANDIDATES: usize = 50;
pub const DEFAULT_GSS_CANDIDATES: usize = 10;

/// Buffer sizes used in the reference experiments.
pub const CAPACITY_PRESETS: [usize; 4] = [500, 1000, 2000, 5000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BufferRepr", into = "BufferRepr")]
pub struct ExemplarBuffer {
    capacity: usize,
    items: Vec<LabeledVector>,
    /// Per-item strategy score, e.g. the gradient similarity used by GSS.
    scores: Vec<f64>,
    ids: HashSet<SampleId>,
    seen_count: u64,
}

#[derive(Serialize, Deserialize)]
struct BufferRepr {
    capacity: usize,
    items: Vec<LabeledVector>,
    scores: Vec<f64>,
    seen_count: u64,
}

impl From<BufferRepr> for ExemplarBuffer {
    fn from(r: BufferRepr) -> Self {
        let ids = r.items.iter().map(|x| x.id).collect();
        ExemplarBuffer {
            capacity: r.capacity,
            items: r.items,
            scores: r.scores,
            ids,
            seen_count: r.seen_count,
        }
    }
}

impl From<ExemplarBuffer> for BufferRepr {
    fn from(b: ExemplarBuffer) -> Self {
        BufferRepr {
            capacity: b.capacity,
            items: b.items,
            scores: b.scores,
            seen_count: b.seen_count,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sample_gradient(state: &ClassifierState, x: &LabeledVector) -> Result<Vec<f64>> {
    Ok(state.loss_and_grads(std::slice::from_ref(x))?.1.flatten())
}

impl ExemplarBuffer {
    pub fn new(capacity: usize) -> Self {
        ExemplarBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
            scores: Vec::with_capacity(capacity),
            ids: HashSet::with_capacity(capacity),
            seen_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[LabeledVector] {
        &self.items
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Number of distinct samples offered so far.
    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.ids.contains(&id)
    }

    fn push(&mut self, x: LabeledVector, score: f64) {
        self.ids.insert(x.id);
        self.items.push(x);
        self.scores.push(score);
    }

    fn replace(&mut self, slot: usize, x: LabeledVector, score: f64) {
        self.ids.remove(&self.items[slot].id);
        self.ids.insert(x.id);
        self.items[slot] = x;
        self.scores[slot] = score;
    }

    /// Reservoir sampling over everything ever offered: the `j`-th distinct
    /// sample enters a full buffer with probability `capacity / j`, evicting
    /// a uniformly chosen item. Already stored ids are ignored.
    pub fn update_random<R: Rng + ?Sized>(&mut self, batch: &[LabeledVector], rng: &mut R) {
        for x in batch {
            if self.ids.contains(&x.id) {
                continue;
            }
            self.seen_count += 1;
            if self.items.len() < self.capacity {
                self.push(x.clone(), 0.0);
            } else if self.capacity > 0 {
                let j = rng.random_range(0..self.seen_count);
                if (j as usize) < self.capacity {
                    self.replace(j as usize, x.clone(), 0.0);
                }
            }
        }
    }

    /// Up to `k` distinct items drawn uniformly.
    pub fn retrieve_random<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<LabeledVector> {
        let amount = k.min(self.items.len());
        index::sample(rng, self.items.len(), amount)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }

    fn candidate_indices<R: Rng + ?Sized>(&self, size: Option<usize>, rng: &mut R) -> Vec<usize> {
        match size {
            Some(c) if c < self.items.len() => index::sample(rng, self.items.len(), c).into_vec(),
            _ => (0..self.items.len()).collect(),
        }
    }

    /// Maximally interfered retrieval.
    ///
    /// Takes one virtual SGD step on `incoming` from a copy of `state`, scores
    /// `candidates` uniformly drawn items (all of them when `None` or larger
    /// than the buffer) by how much their loss rises under the virtual step,
    /// and returns the `k` highest, ties going to the lower sample id.
    pub fn retrieve_mir<R: Rng + ?Sized>(
        &self,
        k: usize,
        incoming: &[LabeledVector],
        state: &ClassifierState,
        sgd: &SgdConfig,
        candidates: Option<usize>,
        rng: &mut R,
    ) -> Result<Vec<LabeledVector>> {
        if self.items.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        if incoming.is_empty() {
            return Ok(self.retrieve_random(k, rng));
        }
        let mut virtual_model = state.clone_trainable();
        let (_, grads) = virtual_model.loss_and_grads(incoming)?;
        virtual_model.sgd_step(&grads, sgd)?;

        let picked: Vec<LabeledVector> = self
            .candidate_indices(candidates, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect();
        let before = state.per_sample_losses(&picked)?;
        let after = virtual_model.per_sample_losses(&picked)?;
        let mut scored: Vec<(f64, LabeledVector)> = after
            .iter()
            .zip(&before)
            .map(|(a, b)| a - b)
            .zip(picked)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        Ok(scored.into_iter().take(k).map(|(_, x)| x).collect())
    }

    /// Greedy gradient-diversity update.
    ///
    /// Each new sample's gradient is compared against the gradients of up to
    /// `candidates` uniformly drawn stored items under the current `state`;
    /// its score is the largest cosine similarity found (0 against an empty
    /// buffer). Below capacity the sample is stored with that score. When
    /// full, it replaces the drawn item with the highest stored score if its
    /// own score is lower, and is discarded otherwise.
    pub fn update_gss<R: Rng + ?Sized>(
        &mut self,
        batch: &[LabeledVector],
        state: &ClassifierState,
        candidates: usize,
        rng: &mut R,
    ) -> Result<()> {
        for x in batch {
            if self.ids.contains(&x.id) {
                continue;
            }
            self.seen_count += 1;
            if self.capacity == 0 {
                continue;
            }
            let g = sample_gradient(state, x)?;
            let drawn = self.candidate_indices(Some(candidates), rng);
            let mut score = 0.0f64;
            let mut first = true;
            for &j in &drawn {
                let sim = cosine(&g, &sample_gradient(state, &self.items[j])?);
                if first || sim > score {
                    score = sim;
                    first = false;
                }
            }
            if self.items.len() < self.capacity {
                self.push(x.clone(), score);
                continue;
            }
            let victim = drawn.iter().copied().reduce(|best, j| {
                if self.scores[j] > self.scores[best] {
                    j
                } else {
                    best
                }
            });
            if let Some(v) = victim {
                if score < self.scores[v] {
                    self.replace(v, x.clone(), score);
                }
            }
        }
        Ok(())
    }

    /// Mean stored feature vector of every class present.
    pub fn class_means(&self) -> BTreeMap<ClassId, Vec<f64>> {
        let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
        for x in &self.items {
            let entry = sums
                .entry(x.label)
                .or_insert_with(|| (vec![0.0; x.features.len()], 0));
            for (s, v) in entry.0.iter_mut().zip(&x.features) {
                *s += v;
            }
            entry.1 += 1;
        }
        sums.into_iter()
            .map(|(c, (sum, n))| (c, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect()
    }
}

/// Replay method: which update and retrieval rules a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayStrategy {
    /// Reservoir update, uniform retrieval.
    Random,
    /// Reservoir update, maximally interfered retrieval.
    Mir { candidates: Option<usize> },
    /// Gradient-diversity update, uniform retrieval.
    Gss { candidates: usize },
}

impl ReplayStrategy {
    #[allow(clippy::too_many_arguments)]
    pub fn retrieve<R: Rng + ?Sized>(
        &self,
        buffer: &ExemplarBuffer,
        k: usize,
        incoming: &[LabeledVector],
        state: &ClassifierState,
        sgd: &SgdConfig,
        rng: &mut R,
    ) -> Result<Vec<LabeledVector>> {
        match *self {
            ReplayStrategy::Random | ReplayStrategy::Gss { .. } => {
                Ok(buffer.retrieve_random(k, rng))
            }
            ReplayStrategy::Mir { candidates } => {
                buffer.retrieve_mir(k, incoming, state, sgd, candidates, rng)
            }
        }
    }

    pub fn update<R: Rng + ?Sized>(
        &self,
        buffer: &mut ExemplarBuffer,
        batch: &[LabeledVector],
        state: &ClassifierState,
        rng: &mut R,
    ) -> Result<()> {
        match *self {
            ReplayStrategy::Random | ReplayStrategy::Mir { .. } => {
                buffer.update_random(batch, rng);
                Ok(())
            }
            ReplayStrategy::Gss { candidates } => buffer.update_gss(batch, state, candidates, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn items(n: u64) -> Vec<LabeledVector> {
        (0..n)
            .map(|i| LabeledVector::new(i, vec![i as f64, 1.0], (i % 3) as ClassId))
            .collect()
    }

    #[test]
    fn below_capacity_keeps_everything() {
        let mut b = ExemplarBuffer::new(10);
        b.update_random(&items(10), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b.len(), 10);
        assert_eq!(b.seen_count(), 10);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut b = ExemplarBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.update_random(&items(3), &mut rng);
        let before = b.clone();
        b.update_random(&items(3)[1..2], &mut rng);
        assert_eq!(b, before);
    }

    #[test]
    fn zero_capacity_stores_nothing() {
        let mut b = ExemplarBuffer::new(0);
        b.update_random(&items(5), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(b.is_empty());
    }

    #[test]
    fn retrieve_random_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = ExemplarBuffer::new(4);
        assert!(empty.retrieve_random(3, &mut rng).is_empty());
        let mut b = ExemplarBuffer::new(5);
        b.update_random(&items(4), &mut rng);
        let mut got: Vec<u64> = b
            .retrieve_random(10, &mut rng)
            .iter()
            .map(|x| x.id.0)
            .collect();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn retrieve_random_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = ExemplarBuffer::new(8);
        b.update_random(&items(8), &mut rng);
        let mut hits = [0u32; 8];
        let trials = 20_000;
        for _ in 0..trials {
            for x in b.retrieve_random(2, &mut rng) {
                hits[x.id.0 as usize] += 1;
            }
        }
        // each item is drawn with probability 2/8
        let sd = (trials as f64 * 0.25 * 0.75).sqrt();
        for h in hits {
            assert!((h as f64 - trials as f64 * 0.25).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn mir_with_zero_learning_rate_takes_lowest_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = ClassifierState::init(Architecture::hidden(2, 3, 3), &mut rng);
        let mut b = ExemplarBuffer::new(8);
        let mut pool = items(8);
        pool.reverse();
        b.update_random(&pool, &mut rng);
        let sgd = SgdConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
        };
        let got = b
            .retrieve_mir(3, &items(2), &state, &sgd, None, &mut rng)
            .unwrap();
        let ids: Vec<u64> = got.iter().map(|x| x.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn mir_forced_full_selection_and_state_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = ClassifierState::init(Architecture::hidden(2, 3, 3), &mut rng);
        let snapshot = state.clone();
        let mut b = ExemplarBuffer::new(5);
        b.update_random(&items(5), &mut rng);
        let got = b
            .retrieve_mir(
                5,
                &items(2),
                &state,
                &SgdConfig::default(),
                Some(5),
                &mut rng,
            )
            .unwrap();
        assert_eq!(got.len(), 5);
        assert_eq!(state, snapshot);
    }

    #[test]
    fn gss_first_sample_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = ClassifierState::init(Architecture::linear(2, 3), &mut rng);
        let mut b = ExemplarBuffer::new(2);
        b.update_gss(&items(1), &state, 10, &mut rng).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.scores(), &[0.0]);
    }

    #[test]
    fn gss_replaces_with_orthogonal_gradient() {
        // Linear model with zero weights: the gradient of sample (x, y) is
        // x (p - e_y) for weights and (p - e_y) for biases. Samples with
        // disjoint feature support and different labels have weight parts
        // that never overlap; bias parts still correlate, so use features
        // large enough that weights dominate.
        let state = ClassifierState::zeros(Architecture::linear(2, 2));
        let mut b = ExemplarBuffer::new(1);
        let stored = LabeledVector::new(0, vec![100.0, 0.0], 0);
        b.push(stored, 1.0);
        let incoming = LabeledVector::new(1, vec![0.0, 100.0], 1);
        b.update_gss(&[incoming], &state, 10, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(b.items()[0].id, SampleId(1));
        assert!(b.scores()[0] < 0.01);
    }

    #[test]
    fn class_means_examples() {
        let mut b = ExemplarBuffer::new(4);
        b.push(LabeledVector::new(0, vec![1.0, -2.0], 0), 0.0);
        b.push(LabeledVector::new(1, vec![3.0, 3.0], 1), 0.0);
        b.push(LabeledVector::new(2, vec![-3.0, -3.0], 1), 0.0);
        let means = b.class_means();
        assert_eq!(means[&0], vec![1.0, -2.0]);
        assert_eq!(means[&1], vec![0.0, 0.0]);
    }

    #[test]
    fn serde_rebuilds_id_index() {
        let mut b = ExemplarBuffer::new(3);
        b.update_random(&items(3), &mut ChaCha8Rng::seed_from_u64(0));
        let back: ExemplarBuffer =
            serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
        assert!(back.contains(SampleId(2)));
    }
}
