//! Random hyperparameter search over learning rate, latent size and batch
//! size, ranked by validation EMD.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::train::{train_vae, VaeConfig};
use crate::projection::GridScan;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub latent_dim: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { lr: vec![1e-4, 2e-4, 1e-3], latent_dim: vec![64, 128, 160], batch_size: vec![32, 64, 128], trials: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub lr: f64,
    pub latent_dim: usize,
    pub batch_size: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.lr.is_empty() || self.latent_dim.is_empty() || self.batch_size.is_empty() {
            return Err(Error::Precondition("search needs at least one trial and non-empty candidate sets".into()));
        }
        Ok(())
    }

    /// Configurations for every trial; each is drawn uniformly and
    /// independently from its own seed stream.
    pub fn sample(&self) -> Vec<TrialConfig> {
        (0..self.trials)
            .map(|t| {
                let mut rng = seed::rng(seed::derive(self.seed, t as u64));
                TrialConfig {
                    lr: *self.lr.choose(&mut rng).expect("non-empty"),
                    latent_dim: *self.latent_dim.choose(&mut rng).expect("non-empty"),
                    batch_size: *self.batch_size.choose(&mut rng).expect("non-empty"),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: TrialConfig,
    /// Best validation EMD (per point) reached during the trial.
    pub val_emd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<TrialResult>,
    pub best: usize,
}

impl SearchReport {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Index of the smallest value; NaN ranks last and ties go to the lower index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    (0..values.len()).min_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])).then(a.cmp(&b)))
}

/// Trains `base` with each sampled configuration for `budget_steps` and
/// returns every trial's validation EMD plus the argmin.
pub fn random_search(
    space: &SearchSpace,
    base: &VaeConfig,
    budget_steps: usize,
    train: &[GridScan],
    val: &[GridScan],
) -> Result<SearchReport> {
    space.validate()?;
    if val.is_empty() {
        return Err(Error::Precondition("random search ranks by validation EMD; the validation stream is empty".into()));
    }
    let mut trials = Vec::with_capacity(space.trials);
    for (index, tc) in space.sample().into_iter().enumerate() {
        let config = VaeConfig {
            lr: tc.lr,
            latent_dim: tc.latent_dim,
            batch_size: tc.batch_size,
            max_steps: budget_steps,
            seed: seed::derive(base.seed, index as u64),
            ..base.clone()
        };
        let val_emd = match train_vae(&config, train, val) {
            Ok(run) => run.best_val_emd().unwrap_or(f64::NAN),
            Err(Error::Diverged { step, detail }) => {
                log::warn!("trial {index} diverged at step {step}: {detail}");
                f64::NAN
            }
            Err(e) => return Err(e),
        };
        log::info!("trial {index}: {tc:?} -> validation EMD {val_emd:.4}");
        trials.push(TrialResult { index, config: tc, val_emd });
    }
    let emds: Vec<f64> = trials.iter().map(|t| t.val_emd).collect();
    let best = argmin(&emds).expect("at least one trial");
    Ok(SearchReport { trials, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded() {
        let s = SearchSpace::default();
        assert_eq!(s.sample(), s.sample());
        assert_eq!(s.sample().len(), 10);
        let other = SearchSpace { seed: 1, ..SearchSpace::default() };
        assert_ne!(s.sample(), other.sample());
        for t in s.sample() {
            assert!(s.lr.contains(&t.lr) && s.latent_dim.contains(&t.latent_dim) && s.batch_size.contains(&t.batch_size));
        }
    }

    #[test]
    fn argmin_ties_and_nan() {
        assert_eq!(argmin(&[3.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin(&[f64::NAN, 2.0]), Some(1));
        assert_eq!(argmin(&[f64::NAN]), Some(0));
        assert_eq!(argmin(&[]), None);
    }

    #[test]
    fn rejects_empty_space() {
        assert!(SearchSpace { trials: 0, ..Default::default() }.validate().is_err());
        assert!(SearchSpace { lr: vec![], ..Default::default() }.validate().is_err());
    }
}
