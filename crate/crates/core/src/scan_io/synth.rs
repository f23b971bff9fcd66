use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_velodyne_bin, RawScan, ScanPoint};
use crate::{seed, Error, Result};

/// Vertical field of view of the synthetic scanner (HDL-64E), in degrees.
pub const ELEVATION_MIN_DEG: f64 = -24.8;
pub const ELEVATION_MAX_DEG: f64 = 2.0;

/// The synthetic scanner's elevation span in radians.
pub fn synth_elevation_span() -> (f64, f64) {
    (ELEVATION_MIN_DEG.to_radians(), ELEVATION_MAX_DEG.to_radians())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Aabb {
    pub fn new(center: [f64; 3], half_extents: [f64; 3]) -> Self {
        Self { center, half_extents }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| (p[k] - self.center[k]).abs() <= self.half_extents[k])
    }

    /// Entry distance of the ray `t * dir` (origin outside the box), if any.
    fn ray_entry(&self, dir: [f64; 3]) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for k in 0..3 {
            let lo = self.center[k] - self.half_extents[k];
            let hi = self.center[k] + self.half_extents[k];
            if dir[k].abs() < 1e-15 {
                if lo > 0.0 || hi < 0.0 {
                    return None;
                }
                continue;
            }
            let (a, b) = (lo / dir[k], hi / dir[k]);
            t_near = t_near.max(a.min(b));
            t_far = t_far.min(a.max(b));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

/// A static scene around a sensor at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Height of the ground plane; `None` for no ground.
    pub ground_height: Option<f64>,
    pub boxes: Vec<Aabb>,
    pub max_range: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::Precondition(format!("max range {} must be positive", self.max_range)));
        }
        if let Some(i) = self.boxes.iter().position(|b| b.contains([0.0; 3])) {
            return Err(Error::Precondition(format!("box {i} contains the sensor origin")));
        }
        Ok(())
    }

    fn cast(&self, dir: [f64; 3]) -> Option<f64> {
        let mut best = self.max_range;
        let mut hit = false;
        if let Some(g) = self.ground_height {
            if dir[2] < 0.0 && g < 0.0 {
                let t = g / dir[2];
                if t <= best {
                    best = t;
                    hit = true;
                }
            }
        }
        for b in &self.boxes {
            if let Some(t) = b.ray_entry(dir) {
                if t <= best {
                    best = t;
                    hit = true;
                }
            }
        }
        hit.then_some(best)
    }
}

/// Elevation (radians) of ray row `i` out of `rows`.
pub fn ray_elevation(i: usize, rows: usize) -> f64 {
    let (lo, hi) = (ELEVATION_MIN_DEG.to_radians(), ELEVATION_MAX_DEG.to_radians());
    if rows == 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (rows - 1) as f64
    }
}

/// Azimuth (radians) of ray column `j` out of `cols`; rays sit at bin centers.
pub fn ray_azimuth(j: usize, cols: usize) -> f64 {
    (j as f64 + 0.5) * std::f64::consts::TAU / cols as f64
}

/// Casts `rows x cols` rays and returns the hits in scanner order: rows of
/// increasing elevation, each swept by increasing azimuth.
pub fn synth_scan(scene: &SceneSpec, rows: usize, cols: usize) -> RawScan {
    let mut points = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let el = ray_elevation(i, rows);
        let (sin_el, cos_el) = el.sin_cos();
        for j in 0..cols {
            let (sin_az, cos_az) = ray_azimuth(j, cols).sin_cos();
            let dir = [cos_el * cos_az, cos_el * sin_az, sin_el];
            if let Some(t) = scene.cast(dir) {
                let intensity = (1.0 - t / scene.max_range).clamp(0.0, 1.0);
                points.push(ScanPoint::new(
                    (t * dir[0]) as f32,
                    (t * dir[1]) as f32,
                    (t * dir[2]) as f32,
                    intensity as f32,
                ));
            }
        }
    }
    RawScan { points }
}

/// A street canyon: ground, two building rows, far end walls, parked/moving
/// cars and poles. `frame` advances the sensor along +x at one meter per frame
/// so consecutive frames of one seed form a temporally coherent sequence.
pub fn random_scene(seed: u64, frame: usize) -> SceneSpec {
    let mut rng = seed::rng(seed);
    let ego_speed = 1.0;
    let t = frame as f64;
    let wrap = |x: f64| (x + 50.0).rem_euclid(100.0) - 50.0;

    let left = rng.random_range(5.0..11.0);
    let right = rng.random_range(5.0..11.0);
    let mut boxes = vec![
        Aabb::new([0.0, left + 5.0, 2.0], [200.0, 5.0, 6.0]),
        Aabb::new([0.0, -(right + 5.0), 2.0], [200.0, 5.0, 6.0]),
        Aabb::new([60.0, 0.0, 4.0], [2.0, 30.0, 8.0]),
        Aabb::new([-60.0, 0.0, 4.0], [2.0, 30.0, 8.0]),
    ];

    let cars = rng.random_range(2..9);
    for _ in 0..cars {
        let lane_right = rng.random_bool(0.5);
        let y = if lane_right { -rng.random_range(1.5..(right - 1.0)) } else { rng.random_range(1.5..(left - 1.0)) };
        let x0 = rng.random_range(-45.0..45.0);
        let speed = if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.3..1.6) };
        let len = rng.random_range(1.8..2.6);
        let height = rng.random_range(0.7..1.0);
        boxes.push(Aabb::new([wrap(x0 + (speed - ego_speed) * t), y, -1.73 + height], [len, 0.9, height]));
    }
    let poles = rng.random_range(0..6);
    for _ in 0..poles {
        let side = if rng.random_bool(0.5) { left - 0.5 } else { -(right - 0.5) };
        let x0 = rng.random_range(-45.0..45.0);
        boxes.push(Aabb::new([wrap(x0 - ego_speed * t), side, 1.0], [0.15, 0.15, 3.0]));
    }
    boxes.retain(|b| {
        let grown = Aabb::new(b.center, [b.half_extents[0] + 0.5, b.half_extents[1] + 0.5, b.half_extents[2]]);
        !grown.contains([0.0; 3])
    });

    SceneSpec { seed, ground_height: Some(-1.73), boxes, max_range: 80.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetSpec {
    pub sequences: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

/// Writes `root/seq_XXXX/NNNNNNNNNN.bin` files; returns the number of scans.
pub fn write_synthetic_dataset(root: impl AsRef<Path>, spec: &SynthDatasetSpec) -> Result<usize> {
    let root = root.as_ref();
    let mut count = 0;
    for s in 0..spec.sequences {
        let dir = root.join(format!("seq_{s:04}"));
        std::fs::create_dir_all(&dir)?;
        let scene_seed = seed::derive(spec.seed, s as u64);
        for f in 0..spec.frames {
            let scene = random_scene(scene_seed, f);
            let scan = synth_scan(&scene, spec.rows, spec.cols);
            write_velodyne_bin(dir.join(format!("{f:010}.bin")), &scan)?;
            count += 1;
        }
    }
    Ok(count)
}
