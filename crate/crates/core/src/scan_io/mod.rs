//! Raw lidar scans: KITTI-style `.bin` I/O, dataset manifests and a procedural
//! scan synthesizer used wherever real data is unavailable.
//!
//! A `.bin` file is a flat run of 16-byte records, each four little-endian
//! `f32` values `x, y, z, intensity`.

mod manifest;
mod synth;

pub use manifest::{build_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{
    random_scene, ray_azimuth, ray_elevation, synth_elevation_span, synth_scan, write_synthetic_dataset, Aabb, SceneSpec,
    SynthDatasetSpec, ELEVATION_MAX_DEG, ELEVATION_MIN_DEG,
};

use std::path::Path;

use crate::{Error, Result};

const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScanPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl ScanPoint {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// One sweep of the scanner, in file (scanner) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawScan {
    pub points: Vec<ScanPoint>,
}

impl RawScan {
    pub fn new(points: Vec<ScanPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn parse_velodyne_bin(bytes: &[u8]) -> Result<RawScan> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedInput(format!(
            "byte length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (index, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(record[4 * k..4 * k + 4].try_into().unwrap());
        let p = ScanPoint::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(Error::CorruptRecord { index });
        }
        points.push(p);
    }
    Ok(RawScan { points })
}

pub fn serialize_velodyne_bin(scan: &RawScan) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(scan.len() * RECORD_BYTES);
    for (i, p) in scan.points.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidScan(format!("point {i} has a non-finite coordinate")));
        }
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_velodyne_bin(path: impl AsRef<Path>) -> Result<RawScan> {
    parse_velodyne_bin(&std::fs::read(path)?)
}

pub fn write_velodyne_bin(path: impl AsRef<Path>, scan: &RawScan) -> Result<()> {
    std::fs::write(path, serialize_velodyne_bin(scan)?)?;
    Ok(())
}
