//! Dataset preparation and the background batch pipeline.

use std::sync::mpsc::{sync_channel, Receiver};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::models::Batch;
use crate::projection::{
    compute_stats, convert, normalize, project, Direction, GridConfig, GridScan, NormStats, Representation,
};
use crate::scan_io::{random_scene, synth_scan};
use crate::{seed, Error, Result};

/// Batches waiting in the prefetch queue.
const QUEUE_DEPTH: usize = 2;

/// Cartesian grids of `count` synthetic scans: `frames` consecutive frames
/// from each of `count / frames` (rounded up) street scenes derived from
/// `seed`, rendered at the grid resolution.
pub fn synthetic_grids(count: usize, frames: usize, seed: u64, cfg: &GridConfig) -> Result<Vec<GridScan>> {
    let frames = frames.max(1);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = random_scene(seed::derive(seed, (i / frames) as u64), i % frames);
            project(&synth_scan(&scene, cfg.height, cfg.width), cfg)
        })
        .collect()
}

/// Normalization statistics for `representation` and for the Cartesian source
/// grids, both fitted on `cartesian`.
pub fn fit_stats(cartesian: &[GridScan], representation: Representation, clip_range: f64) -> Result<(NormStats, NormStats)> {
    if cartesian.is_empty() {
        return Err(Error::Precondition("cannot fit statistics on an empty stream".into()));
    }
    let cart = compute_stats(cartesian, clip_range)?;
    let model = if representation == Representation::Cartesian {
        cart.clone()
    } else {
        let converted = cartesian.par_iter().map(|g| convert(g, representation)).collect::<Result<Vec<_>>>()?;
        compute_stats(&converted, clip_range)?
    };
    Ok((model, cart))
}

/// Converts Cartesian grids to `representation` and normalizes them.
pub fn prepare(cartesian: &[GridScan], representation: Representation, stats: &NormStats) -> Result<Vec<GridScan>> {
    cartesian
        .par_iter()
        .map(|g| normalize(&convert(g, representation)?, stats, Direction::Forward))
        .collect()
}

/// Index lists for `steps` minibatches: the item order is reshuffled every
/// epoch and a trailing partial batch is dropped. Batches are clamped to the
/// dataset size.
pub fn batch_schedule(items: usize, batch_size: usize, steps: usize, seed: u64) -> Vec<Vec<usize>> {
    let b = batch_size.min(items).max(1);
    let per_epoch = (items / b).max(1);
    let mut out = Vec::with_capacity(steps);
    let mut epoch = 0u64;
    while out.len() < steps && items > 0 {
        let mut order: Vec<usize> = (0..items).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, epoch)));
        for k in 0..per_epoch {
            if out.len() == steps {
                break;
            }
            out.push(order[k * b..(k + 1) * b].to_vec());
        }
        epoch += 1;
    }
    out
}

/// Runs `consume` with a receiver fed by a worker that assembles the batches
/// of `schedule` in order.
pub fn with_prefetch<R>(
    grids: &[GridScan],
    schedule: &[Vec<usize>],
    consume: impl FnOnce(Receiver<Result<Batch<f32>>>) -> R,
) -> R {
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel(QUEUE_DEPTH);
        s.spawn(move || {
            for idx in schedule {
                let refs: Vec<&GridScan> = idx.iter().map(|&i| &grids[i]).collect();
                if tx.send(Batch::from_grids(&refs)).is_err() {
                    break;
                }
            }
        });
        consume(rx)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_each_epoch_once() {
        let s = batch_schedule(10, 3, 6, 1);
        assert_eq!(s.len(), 6);
        let mut first: Vec<usize> = s[..3].concat();
        first.sort();
        first.dedup();
        assert_eq!(first.len(), 9);
        assert_eq!(s, batch_schedule(10, 3, 6, 1));
        assert_ne!(s, batch_schedule(10, 3, 6, 2));
        assert_eq!(batch_schedule(2, 8, 3, 0)[0].len(), 2);
        assert!(batch_schedule(5, 2, 0, 0).is_empty());
    }

    #[test]
    fn prefetch_delivers_batches_in_order() {
        let mut grids = Vec::new();
        for i in 0..5 {
            let mut g = GridScan::empty(Representation::Polar, 2, 2);
            g.channels[0] = i as f32;
            grids.push(g);
        }
        let schedule = vec![vec![4, 0], vec![1, 2], vec![3, 3]];
        let firsts: Vec<f32> = with_prefetch(&grids, &schedule, |rx| rx.iter().map(|b| b.unwrap().x.data[0]).collect());
        assert_eq!(firsts, vec![4.0, 1.0, 3.0]);
    }
}
