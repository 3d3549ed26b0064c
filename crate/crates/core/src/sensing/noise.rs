use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Result, SensingError};

/// Dropout channels are this many times noisier than healthy ones.
const DROPOUT_SIGMA_FACTOR: f64 = 10.0;

/// Additive Gaussian noise on stretch ratios, with optional dead channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sensors whose readings are replaced by `1 + N(0, (10 sigma)^2)`.
    #[serde(default)]
    pub dropout_ids: BTreeSet<usize>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0, dropout_ids: BTreeSet::new() }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self { sigma, seed, dropout_ids: BTreeSet::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SensingError::InvalidModel(format!("noise sigma {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    /// Fresh generator seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Adds noise to one feature vector, drawing from `rng` in entry order.
pub fn apply_noise<R: Rng + ?Sized>(features: &[f64], noise: &NoiseModel, rng: &mut R) -> Result<Vec<f64>> {
    noise.validate()?;
    if noise.sigma == 0.0 {
        return Ok(features
            .iter()
            .enumerate()
            .map(|(i, &v)| if noise.dropout_ids.contains(&i) { 1.0 } else { v })
            .collect());
    }
    let healthy = Normal::new(0.0, noise.sigma).expect("sigma validated");
    let dead = Normal::new(0.0, DROPOUT_SIGMA_FACTOR * noise.sigma).expect("sigma validated");
    Ok(features
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if noise.dropout_ids.contains(&i) {
                1.0 + dead.sample(rng)
            } else {
                v + healthy.sample(rng)
            }
        })
        .collect())
}

/// Affine strain-gauge law `R = r0 * (1 + k * (ratio - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeModel {
    pub r0: f64,
    pub k: f64,
}

impl GaugeModel {
    pub fn new(r0: f64, k: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite() && k.is_finite()) {
            return Err(SensingError::InvalidModel(format!("gauge needs r0 > 0, got r0={r0}, k={k}")));
        }
        Ok(Self { r0, k })
    }

    pub fn resistance(&self, ratio: f64) -> f64 {
        self.r0 * (1.0 + self.k * (ratio - 1.0))
    }
}

pub fn to_resistance(features: &[f64], gauge: &GaugeModel) -> Vec<f64> {
    features.iter().map(|&r| gauge.resistance(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let v = vec![1.0, 1.02, 1.5];
        let n = NoiseModel::gaussian(0.0, 9);
        assert_eq!(apply_noise(&v, &n, &mut n.rng()).unwrap(), v);
    }

    #[test]
    fn same_seed_same_output() {
        let v = vec![1.0; 8];
        let n = NoiseModel::gaussian(0.05, 3);
        let a = apply_noise(&v, &n, &mut n.rng()).unwrap();
        let b = apply_noise(&v, &n, &mut n.rng()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, v);
    }

    #[test]
    fn sample_std_matches_sigma() {
        let n = NoiseModel::gaussian(0.01, 11);
        let out = apply_noise(&vec![1.0; 100_000], &n, &mut n.rng()).unwrap();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (out.len() - 1) as f64;
        assert!((var.sqrt() - 0.01).abs() < 0.02 * 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn dropout_channels_are_noise_around_one() {
        let mut n = NoiseModel::gaussian(0.01, 5);
        n.dropout_ids.insert(1);
        let mut rng = n.rng();
        let mut spread = 0.0;
        for _ in 0..2000 {
            let out = apply_noise(&[1.3, 1.3], &n, &mut rng).unwrap();
            spread += (out[1] - 1.0).powi(2);
        }
        let std = (spread / 2000.0).sqrt();
        assert!((std - 0.1).abs() < 0.01, "{std}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let n = NoiseModel::gaussian(-1.0, 0);
        assert!(apply_noise(&[1.0], &n, &mut n.rng()).is_err());
    }

    #[test]
    fn gauge_law() {
        let g = GaugeModel::new(1000.0, 2.0).unwrap();
        assert_eq!(to_resistance(&[1.0], &g), vec![1000.0]);
        assert!((g.resistance(1.1) - 1200.0).abs() < 1e-9);
        assert!(GaugeModel::new(0.0, 2.0).is_err());
    }

    #[test]
    fn gauge_monotone() {
        let g = GaugeModel::new(470.0, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(1.0..1.5);
            let b: f64 = rng.random_range(1.0..1.5);
            if a < b {
                assert!(g.resistance(a) < g.resistance(b));
            }
        }
    }
}
