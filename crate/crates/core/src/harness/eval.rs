//! Reconstruction quality under input corruption.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionKind, CorruptionSpec};
use crate::metrics::{chamfer, emd_auto, equalize, DEFAULT_N_MAX, EMD_EXACT_ROUTINE_MAX};
use crate::models::{planes_to_grid, Batch, Checkpoint, Model, Vae};
use crate::projection::{convert, normalize, unproject, Direction, GridScan, NormStats, PointSet, Representation};
use crate::{seed, Error, Result};

pub const DEFAULT_NOISE_LEVELS: [f64; 7] = [0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_REMOVAL_LEVELS: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.25, 0.5, 0.75];

pub fn noise_sweep(seed: u64) -> Vec<CorruptionSpec> {
    DEFAULT_NOISE_LEVELS.iter().map(|&s| CorruptionSpec::noise(s, seed)).collect()
}

pub fn removal_sweep(seed: u64) -> Vec<CorruptionSpec> {
    DEFAULT_REMOVAL_LEVELS.iter().map(|&p| CorruptionSpec::removal(p, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Cap on points per set before computing distances.
    pub n_max: usize,
    /// Largest set size solved with the exact assignment; the auction
    /// handles larger ones.
    pub exact_max: usize,
    /// Auction accuracy relative to a lower bound on the optimum.
    pub rel_tol: f64,
    pub batch_size: usize,
    /// Seed for subsampling when equalizing set sizes.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX, exact_max: EMD_EXACT_ROUTINE_MAX, rel_tol: 1e-3, batch_size: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanDistances {
    pub emd: f64,
    pub chamfer: f64,
    /// Points per set after equalizing.
    pub points: usize,
}

/// EMD and Chamfer between a reconstruction and its original after
/// equalizing their sizes. `index` keys the subsampling seed.
pub fn scan_distances(recon: &PointSet, original: &PointSet, opts: &EvalOptions, index: usize) -> Result<ScanDistances> {
    let (a, b) = equalize(recon, original, opts.n_max, seed::derive(opts.seed, index as u64))?;
    Ok(ScanDistances { emd: emd_auto(&a, &b, opts.exact_max, opts.rel_tol)?, chamfer: chamfer(&a, &b)?, points: a.len() })
}

/// Encodes each normalized grid to its posterior mean, decodes, and returns
/// the denormalized reconstruction as points.
pub fn reconstruct(vae: &Vae<f32>, stats: &NormStats, grids: &[GridScan], batch_size: usize) -> Result<Vec<PointSet>> {
    let a = &vae.arch;
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(batch_size.max(1)) {
        let batch = Batch::<f32>::from_grids(&chunk.iter().collect::<Vec<_>>())?;
        let y = vae.reconstruct_batch(&batch.x)?;
        let decoded: Vec<GridScan> =
            (0..chunk.len()).map(|i| planes_to_grid(y.item(i), a.representation, a.height, a.width)).collect();
        out.extend(decoded.par_iter().map(|g| unproject(g, Some(stats))).collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

/// Per-scan distances between reconstructions of `inputs` (normalized grids)
/// and `originals`, in stream order.
pub fn reconstruction_distances(
    vae: &Vae<f32>,
    stats: &NormStats,
    inputs: &[GridScan],
    originals: &[PointSet],
    opts: &EvalOptions,
) -> Result<Vec<ScanDistances>> {
    let recon = reconstruct(vae, stats, inputs, opts.batch_size)?;
    recon.par_iter().zip(originals).enumerate().map(|(i, (r, o))| scan_distances(r, o, opts, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub corruption: CorruptionSpec,
    /// Stream average of per-scan EMD summed over points.
    pub emd_sum: f64,
    /// Stream average of per-scan EMD divided by the point count.
    pub emd_mean: f64,
    pub chamfer_sum: f64,
    pub chamfer_mean: f64,
    pub n_scans: usize,
}

impl EvalRow {
    pub fn from_distances(corruption: CorruptionSpec, d: &[ScanDistances]) -> Self {
        let n = d.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ScanDistances) -> f64| d.iter().map(f).sum::<f64>() / n;
        Self {
            corruption,
            emd_sum: avg(&|s| s.emd),
            emd_mean: avg(&|s| s.emd / s.points as f64),
            chamfer_sum: avg(&|s| s.chamfer),
            chamfer_mean: avg(&|s| s.chamfer / s.points as f64),
            n_scans: d.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub representation: Representation,
    pub rows: Vec<EvalRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    kind: &'a str,
    level: f64,
    seed: u64,
    emd_sum: f64,
    emd_mean: f64,
    chamfer_sum: f64,
    chamfer_mean: f64,
    n_scans: usize,
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(CsvRow {
                kind: r.corruption.kind.name(),
                level: r.corruption.level,
                seed: r.corruption.seed,
                emd_sum: r.emd_sum,
                emd_mean: r.emd_mean,
                chamfer_sum: r.chamfer_sum,
                chamfer_mean: r.chamfer_mean,
                n_scans: r.n_scans,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_of(&self, kind: CorruptionKind) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.corruption.kind == kind)
    }
}

/// For every corruption level: corrupt the clean Cartesian grids (scaled by
/// the checkpoint's Cartesian statistics), convert to the model's
/// representation, normalize, reconstruct from the posterior mean, and
/// compare against the clean scan.
pub fn eval_reconstruction(
    checkpoint: &Checkpoint,
    test_cartesian: &[GridScan],
    sweep: &[CorruptionSpec],
    opts: &EvalOptions,
    model_id: &str,
) -> Result<EvalReport> {
    let Model::Vae(vae) = &checkpoint.model else {
        return Err(Error::Precondition("reconstruction needs a VAE checkpoint".into()));
    };
    if test_cartesian.is_empty() {
        return Err(Error::Precondition("empty test stream".into()));
    }
    let rep = vae.arch.representation;
    let originals: Vec<PointSet> =
        test_cartesian.par_iter().map(|g| unproject(g, None)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sweep.len());
    for spec in sweep {
        spec.validate()?;
        let inputs = test_cartesian
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let corrupted = spec.apply(g, &checkpoint.cartesian_stats, i)?;
                normalize(&convert(&corrupted, rep)?, &checkpoint.stats, Direction::Forward)
            })
            .collect::<Result<Vec<_>>>()?;
        let d = reconstruction_distances(vae, &checkpoint.stats, &inputs, &originals, opts)?;
        rows.push(EvalRow::from_distances(*spec, &d));
    }
    Ok(EvalReport { model_id: model_id.into(), representation: rep, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps_have_seven_levels() {
        assert_eq!(noise_sweep(1).len(), 7);
        assert_eq!(removal_sweep(1)[3].level, 0.15);
    }

    #[test]
    fn row_aggregation() {
        let d = [
            ScanDistances { emd: 10.0, chamfer: 4.0, points: 10 },
            ScanDistances { emd: 30.0, chamfer: 8.0, points: 20 },
        ];
        let r = EvalRow::from_distances(CorruptionSpec::noise(0.0, 0), &d);
        assert_eq!((r.emd_sum, r.emd_mean, r.chamfer_sum, r.chamfer_mean, r.n_scans), (20.0, 1.25, 6.0, 0.4, 2));
    }

    #[test]
    fn csv_columns() {
        let report = EvalReport {
            model_id: "m".into(),
            representation: Representation::Polar,
            rows: vec![EvalRow::from_distances(CorruptionSpec::removal(0.25, 3), &[ScanDistances { emd: 1.0, chamfer: 2.0, points: 4 }])],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "kind,level,seed,emd_sum,emd_mean,chamfer_sum,chamfer_mean,n_scans\nremoval,0.25,3,1.0,0.25,2.0,0.5,1\n"
        );
    }
}
