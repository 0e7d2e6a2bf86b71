//! Reference implementations for the integration tests. They use plain
//! loops over the parameters and share no code with the library's numerics.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rocil::learner::{Architecture, ClassifierState, SgdConfig};
use rocil::stream::LabeledVector;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain copy of a model's parameters: per layer `(w[in][out], b[out])`.
#[derive(Debug, Clone)]
pub struct Params {
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl Params {
    pub fn of(state: &ClassifierState) -> Self {
        Params {
            layers: state
                .layers
                .iter()
                .map(|l| {
                    let (fi, fo) = l.weights.dim();
                    let w = (0..fi)
                        .map(|i| (0..fo).map(|j| l.weights[[i, j]]).collect())
                        .collect();
                    (w, l.bias.to_vec())
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            for row in w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for (w, b) in &mut self.layers {
            for row in w.iter_mut() {
                for v in row.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
            for v in b.iter_mut() {
                *v = it.next().unwrap();
            }
        }
    }

    /// Hidden activations of every layer input plus the logits.
    fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut inputs = vec![x.to_vec()];
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let mut z = b.clone();
            for (i, xi) in a.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += xi * w[i][j];
                }
            }
            if k < last {
                z = z.into_iter().map(f64::tanh).collect();
                inputs.push(z.clone());
            }
            a = z;
        }
        (inputs, a)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).1
    }

    pub fn loss(&self, x: &LabeledVector) -> f64 {
        let z = self.logits(&x.features);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[x.label as usize]
    }

    pub fn mean_loss(&self, batch: &[LabeledVector]) -> f64 {
        batch.iter().map(|x| self.loss(x)).sum::<f64>() / batch.len() as f64
    }

    /// Mean cross-entropy gradient by per-sample backpropagation.
    pub fn grads(&self, batch: &[LabeledVector]) -> Params {
        let mut g = Params {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (vec![vec![0.0; w[0].len()]; w.len()], vec![0.0; b.len()]))
                .collect(),
        };
        let n = batch.len() as f64;
        for x in batch {
            let (inputs, z) = self.trace(&x.features);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let mut delta: Vec<f64> = z.iter().map(|v| (v - m).exp() / s).collect();
            delta[x.label as usize] -= 1.0;
            for k in (0..self.layers.len()).rev() {
                let input = &inputs[k];
                let (gw, gb) = &mut g.layers[k];
                for (i, xi) in input.iter().enumerate() {
                    for (j, dj) in delta.iter().enumerate() {
                        gw[i][j] += xi * dj / n;
                    }
                }
                for (j, dj) in delta.iter().enumerate() {
                    gb[j] += dj / n;
                }
                if k > 0 {
                    let w = &self.layers[k].0;
                    delta = (0..input.len())
                        .map(|i| {
                            let back: f64 =
                                delta.iter().enumerate().map(|(j, d)| d * w[i][j]).sum();
                            back * (1.0 - input[i] * input[i])
                        })
                        .collect();
                }
            }
        }
        g
    }

    /// One SGD step with decoupled weight decay on weights only.
    pub fn step(&self, g: &Params, lr: f64, wd: f64) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .zip(&g.layers)
                .map(|((w, b), (gw, gb))| {
                    let w = w
                        .iter()
                        .zip(gw)
                        .map(|(row, grow)| {
                            row.iter()
                                .zip(grow)
                                .map(|(v, d)| v - lr * (d + wd * v))
                                .collect()
                        })
                        .collect();
                    let b = b.iter().zip(gb).map(|(v, d)| v - lr * d).collect();
                    (w, b)
                })
                .collect(),
        }
    }

    pub fn load_into(&self, state: &mut ClassifierState) {
        for (layer, (w, b)) in state.layers.iter_mut().zip(&self.layers) {
            for (i, row) in w.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    layer.weights[[i, j]] = *v;
                }
            }
            for (j, v) in b.iter().enumerate() {
                layer.bias[j] = *v;
            }
        }
    }
}

pub fn random_batch<R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    classes: u32,
    first_id: u64,
) -> Vec<LabeledVector> {
    (0..n)
        .map(|i| {
            let features = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            LabeledVector::new(first_id + i as u64, features, rng.random_range(0..classes))
        })
        .collect()
}

pub fn random_state<R: Rng>(rng: &mut R, arch: Architecture) -> ClassifierState {
    ClassifierState::init(arch, rng)
}

/// Brute-force interfered retrieval: score every item by its loss rise
/// under one virtual step on `incoming`, take the top `k`.
pub fn mir_oracle(
    items: &[LabeledVector],
    k: usize,
    incoming: &[LabeledVector],
    state: &ClassifierState,
    sgd: &SgdConfig,
) -> Vec<u64> {
    let p = Params::of(state);
    let after = p.step(&p.grads(incoming), sgd.learning_rate, sgd.weight_decay);
    let mut scored: Vec<(f64, u64)> = items
        .iter()
        .map(|x| (after.loss(x) - p.loss(x), x.id.0))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Relative error of an analytic gradient against central differences.
pub fn gradient_check(state: &ClassifierState, batch: &[LabeledVector], h: f64) -> f64 {
    let (_, grads) = state.loss_and_grads(batch).unwrap();
    let analytic = grads.flatten();
    let base = Params::of(state);
    let flat = base.flat();
    let mut numeric = Vec::with_capacity(flat.len());
    let mut probe = base.clone();
    for i in 0..flat.len() {
        let mut v = flat.clone();
        v[i] = flat[i] + h;
        probe.set_flat(&v);
        let up = probe.mean_loss(batch);
        v[i] = flat[i] - h;
        probe.set_flat(&v);
        let down = probe.mean_loss(batch);
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
        + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
