//! Generative modeling of lidar scans.
//!
//! Scans are unrolled into an `H x W` grid (one row per elevation ring, one
//! column per azimuth bin) so that ordinary 2D convolutional VAEs and GANs can
//! model them. The crate covers the whole pipeline: raw scan I/O, grid
//! projection, input corruption, point-set metrics (Chamfer, EMD), the models
//! themselves and the training / evaluation harness.

pub mod corruption;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod projection;
pub mod scan_io;
pub mod seed;

pub use error::{Error, Result};
pub use projection::{GridConfig, GridScan, NormStats, PointSet, Representation, RowAssignment};
pub use scan_io::{RawScan, ScanPoint};
