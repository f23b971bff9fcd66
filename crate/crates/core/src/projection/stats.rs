use serde::{Deserialize, Serialize};

use super::GridScan;
use crate::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;
/// Z-scores are clamped to `±CLAMP_SIGMAS` and then scaled into `[-1, 1]`.
pub const CLAMP_SIGMAS: f64 = 4.0;

/// Per-channel mean / standard deviation over occupied training cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub clip_range: f64,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: Self = serde_json::from_str(s)?;
        if stats.mean.len() != stats.std.len() || stats.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Format("NormStats needs matching mean/std and positive std".into()));
        }
        Ok(stats)
    }

    fn check(&self, grid: &GridScan) -> Result<()> {
        if self.channels() != grid.num_channels() {
            return Err(Error::Shape(format!(
                "stats have {} channels, grid has {}",
                self.channels(),
                grid.num_channels()
            )));
        }
        Ok(())
    }

    pub fn standardize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn destandardize(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}

/// Running mean / M2 accumulator, merged pairwise.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }
}

/// Mean and (population) standard deviation of every channel over the occupied
/// cells of `grids`, after clipping values to `±clip_range`.
pub fn compute_stats<'a>(grids: impl IntoIterator<Item = &'a GridScan>, clip_range: f64) -> Result<NormStats> {
    let mut acc: Option<Vec<Moments>> = None;
    for grid in grids {
        if grid.normalized {
            return Err(Error::Precondition("statistics need unnormalized grids".into()));
        }
        let c = grid.num_channels();
        let acc = acc.get_or_insert_with(|| vec![Moments::default(); c]);
        if acc.len() != c {
            return Err(Error::Shape("grids in the stream have different channel counts".into()));
        }
        let mut local = vec![Moments::default(); c];
        for cell in 0..grid.cells() {
            if grid.mask[cell] {
                for (k, &v) in grid.cell(cell).iter().enumerate() {
                    local[k].push((v as f64).clamp(-clip_range, clip_range));
                }
            }
        }
        for (a, l) in acc.iter_mut().zip(local) {
            *a = a.merge(l);
        }
    }
    let acc = acc.ok_or_else(|| Error::Precondition("no grids to compute statistics from".into()))?;
    if acc[0].n == 0.0 {
        return Err(Error::Precondition("no occupied cells to compute statistics from".into()));
    }
    Ok(NormStats {
        mean: acc.iter().map(|m| m.mean).collect(),
        std: acc.iter().map(|m| (m.m2 / m.n).sqrt().max(STD_FLOOR)).collect(),
        clip_range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Forward: `clamp((v - mean) / std, ±4) / 4` on occupied cells. Inverse undoes
/// it exactly on `[-1, 1]`. Unoccupied cells stay zero.
pub fn normalize(grid: &GridScan, stats: &NormStats, direction: Direction) -> Result<GridScan> {
    stats.check(grid)?;
    match direction {
        Direction::Forward if grid.normalized => {
            return Err(Error::Precondition("grid is already normalized".into()))
        }
        Direction::Inverse if !grid.normalized => return Err(Error::Precondition("grid is not normalized".into())),
        _ => {}
    }
    let mut out = grid.clone();
    out.normalized = direction == Direction::Forward;
    for cell in 0..grid.cells() {
        if !grid.mask[cell] {
            continue;
        }
        for (k, v) in out.cell_mut(cell).iter_mut().enumerate() {
            let x = *v as f64;
            *v = match direction {
                Direction::Forward => stats.standardize(k, x).clamp(-CLAMP_SIGMAS, CLAMP_SIGMAS) / CLAMP_SIGMAS,
                Direction::Inverse => stats.destandardize(k, x * CLAMP_SIGMAS),
            } as f32;
        }
    }
    Ok(out)
}
