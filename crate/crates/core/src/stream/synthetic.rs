use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{stream_for, Purpose};

/// Isotropic Gaussian clusters, one per class.
///
/// Class centers are drawn from `N(0, center_scale^2 I)` and samples from
/// `N(center, noise_std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: u32,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub center_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 20,
            feature_dim: 32,
            train_per_class: 200,
            test_per_class: 20,
            center_scale: 1.0,
            noise_std: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Dataset {
        let mut rng = stream_for(self.seed, Purpose::Dataset);
        let center = Normal::new(0.0, self.center_scale).expect("finite center_scale");
        let noise = Normal::new(0.0, self.noise_std).expect("finite noise_std");
        let classes = (0..self.num_classes)
            .map(|c| {
                let mu: Vec<f64> = (0..self.feature_dim)
                    .map(|_| center.sample(&mut rng))
                    .collect();
                let mut draw = |n: usize| -> Vec<Vec<f64>> {
                    (0..n)
                        .map(|_| mu.iter().map(|m| m + noise.sample(&mut rng)).collect())
                        .collect()
                };
                let train = draw(self.train_per_class);
                let test = draw(self.test_per_class);
                (format!("cluster_{c}"), train, test)
            })
            .collect();
        Dataset::from_features(self.feature_dim, classes).expect("rows have feature_dim entries")
    }
}
