//! Input degradations: additive Gaussian noise in standardized coordinates and
//! Bernoulli removal of grid cells.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::projection::{GridScan, NormStats};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Noise,
    Removal,
}

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Noise => "noise",
            CorruptionKind::Removal => "removal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Noise standard deviation in standardized units, or removal probability.
    pub level: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self { kind: CorruptionKind::Noise, level: sigma, seed }
    }

    pub fn removal(p: f64, seed: u64) -> Self {
        Self { kind: CorruptionKind::Removal, level: p, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CorruptionKind::Noise => self.level >= 0.0 && self.level.is_finite(),
            CorruptionKind::Removal => (0.0..=1.0).contains(&self.level),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{} level {} is out of range", self.kind.name(), self.level)))
        }
    }

    /// Corrupts the `index`-th scan of a stream. The per-scan seed depends only
    /// on `(seed, index)`, so batches can be corrupted in any order.
    pub fn apply(&self, grid: &GridScan, stats: &NormStats, index: usize) -> Result<GridScan> {
        let s = seed::derive(self.seed, index as u64);
        match self.kind {
            CorruptionKind::Noise => add_noise(grid, stats, self.level, s),
            CorruptionKind::Removal => drop_points(grid, self.level, s),
        }
    }
}

/// Adds `N(0, sigma)` to every channel of every occupied cell in standardized
/// units, i.e. `v + std_k * n`.
pub fn add_noise(grid: &GridScan, stats: &NormStats, sigma: f64, seed: u64) -> Result<GridScan> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("noise sigma {sigma} must be >= 0")));
    }
    if grid.normalized {
        return Err(Error::Precondition("add_noise expects an unnormalized grid".into()));
    }
    if stats.channels() != grid.num_channels() {
        return Err(Error::Shape(format!("stats have {} channels, grid {}", stats.channels(), grid.num_channels())));
    }
    let mut out = grid.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = seed::rng(seed);
    for cell in 0..grid.cells() {
        if !grid.mask[cell] {
            continue;
        }
        for (k, v) in out.cell_mut(cell).iter_mut().enumerate() {
            let n: f64 = normal.sample(&mut rng);
            *v = (*v as f64 + stats.std[k] * n) as f32;
        }
    }
    Ok(out)
}

/// Clears each occupied cell independently with probability `p`.
pub fn drop_points(grid: &GridScan, p: f64, seed: u64) -> Result<GridScan> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("removal probability {p} must be in [0, 1]")));
    }
    let mut out = grid.clone();
    let mut rng = seed::rng(seed);
    for cell in 0..grid.cells() {
        if grid.mask[cell] && rng.random_bool(p) {
            out.clear_cell(cell);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{normalize, Direction, Representation, CLAMP_SIGMAS};

    fn dense_grid(h: usize, w: usize, seed: u64) -> GridScan {
        let mut rng = crate::seed::rng(seed);
        let mut g = GridScan::empty(Representation::Cartesian, h, w);
        for cell in 0..g.cells() {
            g.mask[cell] = true;
            for v in g.cell_mut(cell) {
                *v = rng.random_range(-20.0..20.0);
            }
        }
        g
    }

    fn stats() -> NormStats {
        NormStats { mean: vec![1.0, -3.0, -1.0], std: vec![10.0, 8.0, 0.5], clip_range: 80.0 }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let g = dense_grid(4, 8, 1);
        assert_eq!(add_noise(&g, &stats(), 0.0, 3).unwrap(), g);
    }

    #[test]
    fn zero_and_one_probability() {
        let g = dense_grid(4, 8, 1);
        assert_eq!(drop_points(&g, 0.0, 3).unwrap(), g);
        let empty = drop_points(&g, 1.0, 3).unwrap();
        assert!(empty.mask.iter().all(|m| !m));
        assert!(empty.channels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn domain_errors() {
        let g = dense_grid(2, 2, 1);
        assert!(matches!(add_noise(&g, &stats(), -0.1, 0), Err(Error::Domain(_))));
        assert!(matches!(drop_points(&g, 1.5, 0), Err(Error::Domain(_))));
        assert!(matches!(drop_points(&g, -0.5, 0), Err(Error::Domain(_))));
        assert!(CorruptionSpec::noise(-1.0, 0).validate().is_err());
        assert!(CorruptionSpec::removal(0.3, 0).validate().is_ok());
    }

    #[test]
    fn deterministic_and_mask_preserving() {
        let g = dense_grid(8, 16, 2);
        let a = add_noise(&g, &stats(), 0.5, 9).unwrap();
        assert_eq!(a, add_noise(&g, &stats(), 0.5, 9).unwrap());
        assert_ne!(a, add_noise(&g, &stats(), 0.5, 10).unwrap());
        assert_eq!(a.mask, g.mask);
        let d = drop_points(&g, 0.3, 9).unwrap();
        assert_eq!(d, drop_points(&g, 0.3, 9).unwrap());
        assert!(d.mask.iter().zip(&g.mask).all(|(&after, &before)| !after || before));
    }

    #[test]
    fn removal_count_concentrates() {
        let g = dense_grid(100, 100, 3);
        let d = drop_points(&g, 0.5, 17).unwrap();
        let removed = g.occupied() - d.occupied();
        assert!((removed as i64 - 5000).abs() <= 150, "removed {removed}");
    }

    #[test]
    fn noise_commutes_with_normalization_inside_the_clamp() {
        let g = dense_grid(16, 32, 4);
        let s = stats();
        let sigma = 0.3;
        let noisy = add_noise(&g, &s, sigma, 5).unwrap();
        let n_clean = normalize(&g, &s, Direction::Forward).unwrap();
        let n_noisy = normalize(&noisy, &s, Direction::Forward).unwrap();
        let mut checked = 0;
        for cell in 0..g.cells() {
            for k in 0..3 {
                let z_clean = s.standardize(k, g.cell(cell)[k] as f64);
                let noise = (noisy.cell(cell)[k] as f64 - g.cell(cell)[k] as f64) / s.std[k];
                if z_clean.abs() < CLAMP_SIGMAS && (z_clean + noise).abs() < CLAMP_SIGMAS {
                    let lhs = n_noisy.cell(cell)[k] as f64;
                    let rhs = n_clean.cell(cell)[k] as f64 + noise / CLAMP_SIGMAS;
                    assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn spec_json_shape() {
        let s = CorruptionSpec::removal(0.25, 7);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"kind":"removal","level":0.25,"seed":7}"#);
    }

    #[test]
    fn per_scan_seed_depends_on_index() {
        let g = dense_grid(4, 8, 1);
        let spec = CorruptionSpec::noise(0.5, 1);
        assert_ne!(spec.apply(&g, &stats(), 0).unwrap(), spec.apply(&g, &stats(), 1).unwrap());
        assert_eq!(spec.apply(&g, &stats(), 1).unwrap(), spec.apply(&g, &stats(), 1).unwrap());
    }
}
