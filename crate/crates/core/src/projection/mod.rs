//! Projection of raw scans onto the `H x W` elevation/azimuth grid.
//!
//! Each row holds one elevation ring, each column one azimuth bin of width
//! `2π / W`. A cell stores the mean of the points that fall into it, either as
//! `(x, y, z)` (Cartesian) or as `(d, z)` with `d = sqrt(x² + y²)` (Polar).

mod container;
mod stats;

pub use container::{read_grids, read_grids_from, write_grids, write_grids_to, LGRD_MAGIC, LGRD_VERSION};
pub use stats::{compute_stats, normalize, Direction, NormStats, CLAMP_SIGMAS, STD_FLOOR};

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::scan_io::RawScan;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Cartesian,
    Polar,
}

impl Representation {
    pub fn channels(self) -> usize {
        match self {
            Representation::Cartesian => 3,
            Representation::Polar => 2,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Representation::Cartesian => 0,
            Representation::Polar => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Representation::Cartesian),
            1 => Some(Representation::Polar),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::Cartesian => "cartesian",
            Representation::Polar => "polar",
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cartesian" | "xyz" => Ok(Representation::Cartesian),
            "polar" | "pol" => Ok(Representation::Polar),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}

/// How points are assigned to grid rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowAssignment {
    /// Split scanner-ordered input into rings at azimuth wrap-arounds. With
    /// more rings than rows, rings are decimated uniformly.
    RingSegmentation,
    /// Equal-width elevation bins over the configured span.
    UniformElevation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    /// `(min, max)` elevation in radians.
    pub elevation_span: (f64, f64),
    pub row_assignment: RowAssignment,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 40,
            width: 256,
            elevation_span: crate::scan_io::synth_elevation_span(),
            row_assignment: RowAssignment::RingSegmentation,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Precondition(format!("grid {}x{} must be non-empty", self.height, self.width)));
        }
        if !(self.elevation_span.0 < self.elevation_span.1) {
            return Err(Error::Precondition(format!("elevation span {:?} is empty", self.elevation_span)));
        }
        Ok(())
    }

    /// Column of an azimuth already wrapped to `[0, 2π)`.
    pub fn column(&self, azimuth: f64) -> usize {
        ((azimuth / (TAU / self.width as f64)) as usize).min(self.width - 1)
    }

    pub fn column_center(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * TAU / self.width as f64
    }

    pub fn elevation_row(&self, elevation: f64) -> usize {
        let (lo, hi) = self.elevation_span;
        let t = (elevation - lo) / (hi - lo);
        ((t * self.height as f64).floor().max(0.0) as usize).min(self.height - 1)
    }
}

/// Azimuth wrapped to `[0, 2π)`.
pub fn azimuth(x: f64, y: f64) -> f64 {
    let a = y.atan2(x);
    let a = if a < 0.0 { a + TAU } else { a };
    if a >= TAU { 0.0 } else { a }
}

/// `H x W x C` grid, channel values interleaved per cell (row-major over cells).
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    pub representation: Representation,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<f32>,
    pub mask: Vec<bool>,
    pub normalized: bool,
}

impl GridScan {
    pub fn empty(representation: Representation, height: usize, width: usize) -> Self {
        Self {
            representation,
            height,
            width,
            channels: vec![0.0; height * width * representation.channels()],
            mask: vec![false; height * width],
            normalized: false,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.representation.channels()
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn cell(&self, index: usize) -> &[f32] {
        let c = self.num_channels();
        &self.channels[index * c..(index + 1) * c]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f32] {
        let c = self.num_channels();
        &mut self.channels[index * c..(index + 1) * c]
    }

    /// Clears a cell: zero channels, mask off.
    pub fn clear_cell(&mut self, index: usize) {
        self.mask[index] = false;
        self.cell_mut(index).fill(0.0);
    }

    pub fn check_invariants(&self) -> Result<()> {
        let c = self.num_channels();
        if self.channels.len() != self.cells() * c || self.mask.len() != self.cells() {
            return Err(Error::Shape(format!(
                "{}x{}x{c} grid has {} channel values and {} mask bits",
                self.height,
                self.width,
                self.channels.len(),
                self.mask.len()
            )));
        }
        for (i, &m) in self.mask.iter().enumerate() {
            let cell = self.cell(i);
            if cell.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScan(format!("cell {i} is not finite")));
            }
            if !m && cell.iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidScan(format!("unoccupied cell {i} is non-zero")));
            }
            if m && !self.normalized && self.representation == Representation::Polar && cell[0] < 0.0 {
                return Err(Error::InvalidScan(format!("cell {i} has negative planar distance")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ASCII XYZ: one `x y z` line per point.
    pub fn to_xyz(&self) -> String {
        let mut s = String::with_capacity(self.len() * 32);
        for p in &self.points {
            s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        s
    }
}

impl From<&RawScan> for PointSet {
    fn from(scan: &RawScan) -> Self {
        PointSet::new(scan.points.iter().map(|p| [p.x as f64, p.y as f64, p.z as f64]).collect())
    }
}

/// Row of each point, or `None` for points dropped by ring decimation.
fn assign_rows(scan: &RawScan, cfg: &GridConfig) -> Vec<Option<usize>> {
    match cfg.row_assignment {
        RowAssignment::UniformElevation => scan
            .points
            .iter()
            .map(|p| {
                let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
                Some(cfg.elevation_row(z.atan2((x * x + y * y).sqrt())))
            })
            .collect(),
        RowAssignment::RingSegmentation => {
            let mut rings = Vec::with_capacity(scan.len());
            let mut ring = 0usize;
            let mut prev = None;
            for p in &scan.points {
                let az = azimuth(p.x as f64, p.y as f64);
                if let Some(prev) = prev {
                    if az < prev - PI {
                        ring += 1;
                    }
                }
                prev = Some(az);
                rings.push(ring);
            }
            let ring_count = if scan.is_empty() { 0 } else { ring + 1 };
            let row_of_ring: Vec<Option<usize>> = if ring_count <= cfg.height {
                (0..ring_count).map(Some).collect()
            } else {
                let mut map = vec![None; ring_count];
                for row in 0..cfg.height {
                    map[row * ring_count / cfg.height] = Some(row);
                }
                map
            };
            rings.into_iter().map(|r| row_of_ring[r]).collect()
        }
    }
}

/// Projects a scan onto a Cartesian grid in one pass over the points.
pub fn project(scan: &RawScan, cfg: &GridConfig) -> Result<GridScan> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let rows = assign_rows(scan, cfg);
    let mut sums = vec![[0f64; 3]; h * w];
    let mut counts = vec![0u32; h * w];
    for (p, row) in scan.points.iter().zip(rows) {
        let Some(row) = row else { continue };
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidScan("non-finite point".into()));
        }
        let cell = row * w + cfg.column(azimuth(x, y));
        let s = &mut sums[cell];
        s[0] += x;
        s[1] += y;
        s[2] += z;
        counts[cell] += 1;
    }
    let mut grid = GridScan::empty(Representation::Cartesian, h, w);
    for (cell, (s, &n)) in sums.iter().zip(&counts).enumerate() {
        if n > 0 {
            grid.mask[cell] = true;
            let out = grid.cell_mut(cell);
            for k in 0..3 {
                out[k] = (s[k] / n as f64) as f32;
            }
        }
    }
    Ok(grid)
}

pub fn to_polar(grid: &GridScan) -> Result<GridScan> {
    if grid.representation != Representation::Cartesian {
        return Err(Error::Precondition("to_polar expects a Cartesian grid".into()));
    }
    if grid.normalized {
        return Err(Error::Precondition("to_polar expects an unnormalized grid".into()));
    }
    let mut out = GridScan::empty(Representation::Polar, grid.height, grid.width);
    out.mask.clone_from(&grid.mask);
    for cell in 0..grid.cells() {
        if grid.mask[cell] {
            let c = grid.cell(cell);
            let (x, y) = (c[0] as f64, c[1] as f64);
            let d = out.cell_mut(cell);
            d[0] = (x * x + y * y).sqrt() as f32;
            d[1] = c[2];
        }
    }
    Ok(out)
}

/// Converts an unnormalized grid to `target`.
pub fn convert(grid: &GridScan, target: Representation) -> Result<GridScan> {
    match (grid.representation, target) {
        (a, b) if a == b => Ok(grid.clone()),
        (Representation::Cartesian, Representation::Polar) => to_polar(grid),
        _ => Err(Error::Precondition("a Polar grid cannot be converted back to Cartesian".into())),
    }
}

/// One point per occupied cell. Normalized grids need their `stats`.
pub fn unproject(grid: &GridScan, stats: Option<&NormStats>) -> Result<PointSet> {
    let denorm;
    let grid = if grid.normalized {
        let stats = stats.ok_or_else(|| Error::Precondition("normalized grid needs NormStats".into()))?;
        denorm = normalize(grid, stats, Direction::Inverse)?;
        &denorm
    } else {
        grid
    };
    let mut points = Vec::with_capacity(grid.occupied());
    let step = TAU / grid.width as f64;
    for cell in 0..grid.cells() {
        if !grid.mask[cell] {
            continue;
        }
        let c = grid.cell(cell);
        points.push(match grid.representation {
            Representation::Cartesian => [c[0] as f64, c[1] as f64, c[2] as f64],
            Representation::Polar => {
                let theta = ((cell % grid.width) as f64 + 0.5) * step;
                let d = c[0] as f64;
                [d * theta.cos(), d * theta.sin(), c[1] as f64]
            }
        });
    }
    Ok(PointSet { points })
}
