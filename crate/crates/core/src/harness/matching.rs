//! Nearest-neighbour search in discriminator feature space: for generated
//! samples, find the most similar test scans.

use serde::{Deserialize, Serialize};

use crate::models::{Batch, Checkpoint, Gan, Model};
use crate::nn::Tensor;
use crate::projection::GridScan;
use crate::{Error, Result};

/// Dimensions summed between early-abandon checks.
const ABANDON_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    /// Euclidean distance in feature space.
    pub distance: f64,
}

/// Flattened feature vectors, one row per indexed scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    dim: usize,
    rows: Vec<f32>,
}

impl FeatureIndex {
    pub fn new(dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values are not rows of width {dim}", rows.len())));
        }
        Ok(Self { dim, rows })
    }

    /// Third-block discriminator features of normalized grids.
    pub fn build(gan: &Gan<f32>, grids: &[GridScan], batch_size: usize) -> Result<Self> {
        let mut rows = Vec::new();
        let mut dim = 0;
        for chunk in grids.chunks(batch_size.max(1)) {
            let f = features_of(gan, chunk)?;
            dim = f.per_item();
            rows.extend_from_slice(&f.data);
        }
        Self::new(dim, rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, q: &[f32]) {
        assert_eq!(q.len(), self.dim, "query width");
    }

    /// Exhaustive scan: the `k` closest rows by (distance, index).
    pub fn nearest_brute(&self, q: &[f32], k: usize) -> Vec<Neighbor> {
        self.check(q);
        let mut all: Vec<(f64, usize)> = (0..self.len()).map(|i| (sq_dist(q, self.row(i)), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d, index)| Neighbor { index, distance: d.sqrt() }).collect()
    }

    /// Same result as [`Self::nearest_brute`], abandoning a candidate as soon
    /// as its partial distance reaches the current k-th best.
    pub fn nearest(&self, q: &[f32], k: usize) -> Vec<Neighbor> {
        self.check(q);
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        'rows: for i in 0..self.len() {
            let row = self.row(i);
            let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
            let mut acc = 0.0f64;
            for (qc, rc) in q.chunks(ABANDON_CHUNK).zip(row.chunks(ABANDON_CHUNK)) {
                acc = accumulate(acc, qc, rc);
                // Rows are visited in index order, so a later row only wins
                // with a strictly smaller distance.
                if acc >= bound {
                    continue 'rows;
                }
            }
            let pos = best.partition_point(|&(d, _)| d <= acc);
            best.insert(pos, (acc, i));
            best.truncate(k);
        }
        best.into_iter().map(|(d, index)| Neighbor { index, distance: d.sqrt() }).collect()
    }
}

fn accumulate(mut acc: f64, a: &[f32], b: &[f32]) -> f64 {
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    accumulate(0.0, a, b)
}

fn features_of(gan: &Gan<f32>, grids: &[GridScan]) -> Result<Tensor<f32>> {
    for g in grids {
        crate::models::check_grid(&gan.arch, g)?;
    }
    let batch = Batch::<f32>::from_grids(&grids.iter().collect::<Vec<_>>())?;
    gan.features(&batch.x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub sample: usize,
    /// Closest test scans, nearest first.
    pub neighbors: Vec<Neighbor>,
}

/// Draws `num_samples` generator samples from `seed` and finds the `k`
/// nearest normalized test grids for each. Returns the samples too.
pub fn nn_match(
    checkpoint: &Checkpoint,
    num_samples: usize,
    seed: u64,
    test: &[GridScan],
    k: usize,
) -> Result<(Vec<GridScan>, Vec<MatchResult>)> {
    let Model::Gan(gan) = &checkpoint.model else {
        return Err(Error::Precondition("feature matching needs a GAN checkpoint".into()));
    };
    if test.is_empty() {
        return Err(Error::Precondition("empty test stream".into()));
    }
    let index = FeatureIndex::build(gan, test, 16)?;
    let samples = gan.sample(num_samples, seed)?;
    let queries = FeatureIndex::build(gan, &samples, 16)?;
    let matches = (0..num_samples)
        .map(|s| MatchResult { sample: s, neighbors: index.nearest(queries.row(s), k) })
        .collect();
    Ok((samples, matches))
}
