//! Compact softmax classifier trained by plain SGD.
//!
//! Either a single affine layer or one `tanh` hidden layer followed by an
//! affine output layer. The output head always spans the whole class catalog,
//! so classes that have not been trained yet simply lose the argmax.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stream::LabeledVector;
use crate::{ClassId, Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// `None` gives a linear softmax model.
    pub hidden_dim: Option<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden_dim: None,
            num_classes,
        }
    }

    pub fn hidden(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden_dim: Some(hidden_dim),
            num_classes,
        }
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self.hidden_dim {
            None => vec![(self.input_dim, self.num_classes)],
            Some(h) => vec![(self.input_dim, h), (h, self.num_classes)],
        }
    }
}

/// Affine map `x W + b`, `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Gradient of the mean cross-entropy, one [`Dense`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// All entries flattened layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
    pub step_count: u64,
    frozen: bool,
}

struct Activations {
    /// Inputs of every layer; the first entry is the batch itself.
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl ClassifierState {
    pub fn zeros(arch: Architecture) -> Self {
        ClassifierState {
            arch,
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
            step_count: 0,
            frozen: false,
        }
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut state = Self::zeros(arch);
        for layer in &mut state.layers {
            let bound = 1.0 / (layer.weights.nrows() as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        state
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Deep copy that refuses parameter updates.
    pub fn clone_frozen(&self) -> Self {
        ClassifierState {
            frozen: true,
            ..self.clone()
        }
    }

    /// Deep copy that accepts parameter updates, used for virtual steps.
    pub fn clone_trainable(&self) -> Self {
        ClassifierState {
            frozen: false,
            ..self.clone()
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn parameters_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn batch_matrix(&self, batch: &[LabeledVector]) -> Result<Array2<f64>> {
        let d = self.arch.input_dim;
        let mut x = Array2::zeros((batch.len(), d));
        for (mut row, sample) in x.rows_mut().into_iter().zip(batch) {
            if sample.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: sample.features.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(&sample.features[..]));
        }
        Ok(x)
    }

    fn check_labels(&self, batch: &[LabeledVector]) -> Result<()> {
        match batch
            .iter()
            .find(|s| s.label as usize >= self.arch.num_classes)
        {
            Some(s) => Err(Error::Data(format!(
                "label {} outside {} classes",
                s.label, self.arch.num_classes
            ))),
            None => Ok(()),
        }
    }

    fn activations(&self, x: Array2<f64>) -> Activations {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            a = if k < last { z.mapv(f64::tanh) } else { z };
        }
        Activations { inputs, logits: a }
    }

    /// Logits, one row per sample and one column per catalog class.
    pub fn forward(&self, batch: &[LabeledVector]) -> Result<Array2<f64>> {
        let x = self.batch_matrix(batch)?;
        Ok(self.activations(x).logits)
    }

    /// Cross-entropy of every sample under the current parameters.
    pub fn per_sample_losses(&self, batch: &[LabeledVector]) -> Result<Vec<f64>> {
        self.check_labels(batch)?;
        let logits = self.forward(batch)?;
        Ok(logits
            .rows()
            .into_iter()
            .zip(batch)
            .map(|(row, s)| log_sum_exp(row.iter().copied()) - row[s.label as usize])
            .collect())
    }

    /// Mean softmax cross-entropy over `batch` and its exact gradient.
    ///
    /// Weight decay is not part of this loss; [`ClassifierState::sgd_step`]
    /// applies it to the weights.
    pub fn loss_and_grads(&self, batch: &[LabeledVector]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Data("loss of an empty batch".into()));
        }
        self.check_labels(batch)?;
        let x = self.batch_matrix(batch)?;
        let acts = self.activations(x);
        let n = batch.len() as f64;

        let mut loss = 0.0;
        let mut delta = acts.logits;
        for (mut row, s) in delta.rows_mut().into_iter().zip(batch) {
            let lse = log_sum_exp(row.iter().copied());
            loss += lse - row[s.label as usize];
            row.mapv_inplace(|z| (z - lse).exp() / n);
            row[s.label as usize] -= 1.0 / n;
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &acts.inputs[k];
            let grad = Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            };
            if k > 0 {
                // input is tanh output of the previous layer
                let mut back = delta.dot(&self.layers[k].weights.t());
                Zip::from(&mut back)
                    .and(input)
                    .for_each(|b, &h| *b *= 1.0 - h * h);
                delta = back;
            }
            layers.push(grad);
        }
        layers.reverse();
        Ok((loss / n, Gradients { layers }))
    }

    /// `w <- w - lr (g + wd w)` for weights, `b <- b - lr g` for biases.
    pub fn sgd_step(&mut self, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                got: grads.layers.len(),
            });
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if layer.weights.dim() != g.weights.dim() || layer.bias.dim() != g.bias.dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weights.len() + layer.bias.len(),
                    got: g.weights.len() + g.bias.len(),
                });
            }
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .for_each(|w, &gw| *w -= lr * (gw + wd * *w));
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .for_each(|b, &gb| *b -= lr * gb);
        }
        self.step_count += 1;
        if !self.parameters_finite() {
            return Err(Error::Divergence(format!(
                "non-finite parameters after step {}",
                self.step_count
            )));
        }
        Ok(())
    }

    /// Argmax class per sample; ties go to the lowest class id.
    pub fn predict(&self, batch: &[LabeledVector]) -> Result<Vec<ClassId>> {
        let logits = self.forward(batch)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| argmax(row.iter().copied()) as ClassId)
            .collect())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&CheckpointFile {
            version: CHECKPOINT_VERSION,
            state: self.clone(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported learner checkpoint version {}",
                file.version
            )));
        }
        Ok(file.state)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    state: ClassifierState,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value, first one on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Nearest class mean in Euclidean distance; ties go to the lowest class id.
pub fn ncm_predict(
    class_means: &BTreeMap<ClassId, Vec<f64>>,
    batch: &[LabeledVector],
) -> Result<Vec<ClassId>> {
    if class_means.is_empty() {
        return Err(Error::EmptyClassMeans);
    }
    batch
        .iter()
        .map(|s| {
            let mut best: Option<(ClassId, f64)> = None;
            for (&c, mean) in class_means {
                if mean.len() != s.features.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        got: s.features.len(),
                    });
                }
                let d: f64 = mean
                    .iter()
                    .zip(&s.features)
                    .map(|(m, x)| (m - x).powi(2))
                    .sum();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((c, d));
                }
            }
            Ok(best.expect("non-empty means").0)
        })
        .collect()
}
