//! Point-set distances.
//!
//! * Chamfer: sum of squared nearest-neighbour distances in both directions,
//!   accelerated with a k-d tree.
//! * EMD: minimum total (unsquared) Euclidean cost of a bijection between two
//!   equal-size sets, solved exactly with the Hungarian algorithm or
//!   approximately with an ε-scaling auction.

pub mod auction;
pub mod hungarian;
pub mod kdtree;

pub use hungarian::HungarianSolution;
pub use kdtree::{squared_distance, KdTree};

use rand::seq::index;

use crate::projection::PointSet;
use crate::{seed, Error, Result};

/// Largest set size `emd_exact` accepts.
pub const EMD_EXACT_CAP: usize = 1024;
/// Above this size routine evaluation switches to the auction solver.
pub const EMD_EXACT_ROUTINE_MAX: usize = 512;
pub const DEFAULT_N_MAX: usize = 1024;

/// Dense square matrix of non-negative, finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Domain(format!("{} entries do not form a {n}x{n} matrix", data.len())));
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("entry ({}, {}) is not finite", i / n.max(1), i % n.max(1))));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Domain(format!("row {i} has {} entries, expected {n}", rows[i].len())));
        }
        Self::new(n, rows.concat())
    }

    /// Pairwise Euclidean distances between two equal-size sets.
    pub fn euclidean(a: &PointSet, b: &PointSet) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Precondition(format!("set sizes differ ({} vs {})", a.len(), b.len())));
        }
        let mut data = Vec::with_capacity(a.len() * b.len());
        for p in &a.points {
            data.extend(b.points.iter().map(|q| squared_distance(p, q).sqrt()));
        }
        Self::new(a.len(), data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A bijection rows → columns and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    /// Cost is summed in row order.
    pub fn from_permutation(cost: &CostMatrix, permutation: Vec<usize>) -> Self {
        let total_cost = permutation.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        Self { permutation, total_cost }
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        self.permutation.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }
}

pub fn hungarian(cost: &CostMatrix) -> Assignment {
    hungarian::solve(cost).assignment
}

pub fn hungarian_with_duals(cost: &CostMatrix) -> HungarianSolution {
    hungarian::solve(cost)
}

fn directed_chamfer(from: &PointSet, to: &KdTree<'_>) -> f64 {
    from.points.iter().map(|p| to.nearest(p).expect("non-empty tree").1).sum()
}

pub fn chamfer(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedDistance("Chamfer distance of an empty set".into()));
    }
    let ta = KdTree::new(&a.points);
    let tb = KdTree::new(&b.points);
    Ok(directed_chamfer(a, &tb) + directed_chamfer(b, &ta))
}

fn check_emd_sizes(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "EMD needs equal-size sets ({} vs {}); equalize them first",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::UndefinedDistance("EMD of empty sets".into()));
    }
    Ok(())
}

pub fn emd_exact(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_emd_sizes(a, b)?;
    if a.len() > EMD_EXACT_CAP {
        return Err(Error::Precondition(format!(
            "{} points exceed the exact EMD cap of {EMD_EXACT_CAP}; use emd_approx",
            a.len()
        )));
    }
    Ok(hungarian(&CostMatrix::euclidean(a, b)?).total_cost)
}

/// Auction approximation; the result exceeds the optimum by at most
/// `n * epsilon`.
pub fn emd_approx(a: &PointSet, b: &PointSet, epsilon: f64) -> Result<f64> {
    check_emd_sizes(a, b)?;
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("auction epsilon {epsilon} must be positive")));
    }
    Ok(auction::solve(&CostMatrix::euclidean(a, b)?, epsilon).total_cost)
}

/// Exact EMD up to `exact_max` points, otherwise the auction with ε chosen so
/// that the additive error is at most `rel_tol` times a lower bound on the
/// optimum (the sum of row minima).
pub fn emd_auto(a: &PointSet, b: &PointSet, exact_max: usize, rel_tol: f64) -> Result<f64> {
    check_emd_sizes(a, b)?;
    let cost = CostMatrix::euclidean(a, b)?;
    let n = cost.n();
    if n <= exact_max {
        return Ok(hungarian(&cost).total_cost);
    }
    let lower: f64 = (0..n).map(|i| cost.row(i).iter().cloned().fold(f64::INFINITY, f64::min)).sum();
    let max_cost = cost.data().iter().cloned().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return Ok(0.0);
    }
    let eps = (rel_tol * lower / n as f64).max(1e-9 * max_cost);
    Ok(auction::solve(&cost, eps).total_cost)
}

/// Subsamples the larger set(s) uniformly without replacement so both have
/// `min(|a|, |b|, n_max)` points. Point order is preserved.
///
/// Two sets of equal size are subsampled at the same positions, so
/// `equalize(a, a)` yields two identical sets and distances between a set and
/// itself stay zero.
pub fn equalize(a: &PointSet, b: &PointSet, n_max: usize, seed: u64) -> Result<(PointSet, PointSet)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedDistance("cannot equalize an empty set".into()));
    }
    let m = a.len().min(b.len()).min(n_max.max(1));
    let positions = |len: usize, stream: u64| {
        let mut idx = index::sample(&mut seed::rng(seed::derive(seed, stream)), len, m).into_vec();
        idx.sort_unstable();
        idx
    };
    let pick = |s: &PointSet, idx: &[usize]| PointSet::new(idx.iter().map(|&i| s.points[i]).collect());
    if a.len() == b.len() {
        if a.len() == m {
            return Ok((a.clone(), b.clone()));
        }
        let idx = positions(a.len(), 0);
        return Ok((pick(a, &idx), pick(b, &idx)));
    }
    let take = |s: &PointSet, stream: u64| if s.len() == m { s.clone() } else { pick(s, &positions(s.len(), stream)) };
    Ok((take(a, 0), take(b, 1)))
}
