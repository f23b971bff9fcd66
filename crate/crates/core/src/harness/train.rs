//! Training loops.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{batch_schedule, fit_stats, prepare, with_prefetch};
use super::eval::{reconstruction_distances, EvalOptions};
use crate::models::{ArchSpec, Checkpoint, Gan, GanObjective, Model, Vae};
use crate::nn::{Adam, AdamConfig};
use crate::projection::{unproject, GridScan, PointSet, Representation};
use crate::{seed, Error, Result};

// Sub-streams of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_ORDER: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_LATENT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub representation: Representation,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// KL weight; 0 trains a plain autoencoder.
    pub beta: f64,
    /// Reconstruction error only over occupied cells.
    pub masked: bool,
    pub max_steps: usize,
    pub seed: u64,
    /// Validation period in steps (0 validates only at the end).
    pub val_every: usize,
    /// Validation scans used per evaluation (0 = all).
    pub val_scans: usize,
    /// Point cap for validation distances.
    pub val_points: usize,
    pub clip_range: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Polar,
            latent_dim: 64,
            base_channels: 8,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            beta: 1.0,
            masked: true,
            max_steps: 1000,
            seed: 0,
            val_every: 250,
            val_scans: 8,
            val_points: 512,
            clip_range: 80.0,
        }
    }
}

impl VaeConfig {
    pub fn arch(&self) -> ArchSpec {
        ArchSpec::new(self.representation, self.latent_dim, self.base_channels)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Precondition("batch size and learning rate must be positive, beta >= 0".into()));
        }
        self.arch().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeCurvePoint {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub step: usize,
    /// Mean per-point EMD of clean reconstructions.
    pub emd_mean: f64,
}

pub struct VaeRun {
    /// Checkpoint with the lowest validation EMD (the final one when no
    /// validation ran).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: Vec<VaeCurvePoint>,
    pub validation: Vec<ValPoint>,
}

impl VaeRun {
    pub fn best_val_emd(&self) -> Option<f64> {
        self.validation.iter().map(|v| v.emd_mean).min_by(f64::total_cmp)
    }
}

/// Writes `step,<fields...>` rows.
pub fn write_curve_csv<W: Write, P: Serialize>(w: W, points: &[P]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

struct Validator {
    inputs: Vec<GridScan>,
    originals: Vec<PointSet>,
    opts: EvalOptions,
}

impl Validator {
    fn new(val_cartesian: &[GridScan], config: &VaeConfig, stats: &crate::NormStats) -> Result<Option<Self>> {
        if val_cartesian.is_empty() {
            return Ok(None);
        }
        let take = if config.val_scans == 0 { val_cartesian.len() } else { config.val_scans.min(val_cartesian.len()) };
        let subset = &val_cartesian[..take];
        Ok(Some(Self {
            inputs: prepare(subset, config.representation, stats)?,
            originals: subset.par_iter().map(|g| unproject(g, None)).collect::<Result<Vec<_>>>()?,
            opts: EvalOptions { n_max: config.val_points, exact_max: config.val_points, seed: config.seed, ..Default::default() },
        }))
    }

    fn emd_mean(&self, vae: &Vae<f32>, stats: &crate::NormStats) -> Result<f64> {
        let d = reconstruction_distances(vae, stats, &self.inputs, &self.originals, &self.opts)?;
        Ok(d.iter().map(|s| s.emd / s.points as f64).sum::<f64>() / d.len() as f64)
    }
}

/// Trains a VAE on Cartesian grids (converted to the configured
/// representation). Deterministic given the config and data order.
pub fn train_vae(config: &VaeConfig, train_cartesian: &[GridScan], val_cartesian: &[GridScan]) -> Result<VaeRun> {
    config.validate()?;
    if train_cartesian.is_empty() {
        return Err(Error::Precondition("empty training stream".into()));
    }
    let (stats, cartesian_stats) = fit_stats(train_cartesian, config.representation, config.clip_range)?;
    let train = prepare(train_cartesian, config.representation, &stats)?;
    let validator = Validator::new(val_cartesian, config, &stats)?;

    let mut vae = Vae::<f32>::init(config.arch(), seed::derive(config.seed, STREAM_INIT))?;
    let mut opt_enc = Adam::new(config.adam(), &vae.encoder);
    let mut opt_dec = Adam::new(config.adam(), &vae.decoder);
    let snapshot = |vae: &Vae<f32>, step: usize, opts: Vec<Adam<f32>>| {
        let mut ck = Checkpoint::new(Model::Vae(vae.clone()), stats.clone(), cartesian_stats.clone());
        ck.config = serde_json::to_value(config).unwrap_or_default();
        ck.step = step as u64;
        ck.optimizers = opts;
        ck
    };

    let schedule = batch_schedule(train.len(), config.batch_size, config.max_steps, seed::derive(config.seed, STREAM_ORDER));
    let mut curve = Vec::with_capacity(config.max_steps);
    let mut validation = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;

    with_prefetch(&train, &schedule, |rx| -> Result<()> {
        for (step, batch) in rx.iter().enumerate() {
            let batch = batch?;
            let seeds: Vec<u64> =
                (0..batch.len()).map(|i| seed::derive_path(config.seed, &[STREAM_NOISE, step as u64, i as u64])).collect();
            let out = vae.elbo(&batch, &seeds, config.beta, config.masked, true)?;
            if !out.parts.loss.is_finite() || !out.encoder_grads.is_finite() || !out.decoder_grads.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {} (recon {}, kl {})", out.parts.loss, out.parts.recon, out.parts.kl),
                });
            }
            opt_enc.update(&mut vae.encoder, &out.encoder_grads);
            opt_dec.update(&mut vae.decoder, &out.decoder_grads);
            vae.encoder.commit(&out.encoder_tape);
            vae.decoder.commit(&out.decoder_tape);
            let done = step + 1;
            curve.push(VaeCurvePoint { step: done, loss: out.parts.loss, recon: out.parts.recon, kl: out.parts.kl });
            log::debug!("step {done}: loss {:.5} recon {:.5} kl {:.3}", out.parts.loss, out.parts.recon, out.parts.kl);
            let due = (config.val_every > 0 && done % config.val_every == 0) || done == config.max_steps;
            if let (true, Some(v)) = (due, &validator) {
                let emd = v.emd_mean(&vae, &stats)?;
                log::info!("step {done}: validation EMD per point {emd:.4}");
                validation.push(ValPoint { step: done, emd_mean: emd });
                if best.as_ref().is_none_or(|(b, _)| emd < *b) {
                    best = Some((emd, snapshot(&vae, done, Vec::new())));
                }
            }
        }
        Ok(())
    })?;

    let last = snapshot(&vae, curve.len(), vec![opt_enc, opt_dec]);
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    Ok(VaeRun { best, last, curve, validation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub representation: Representation,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub objective: GanObjective,
    /// Only train the discriminator (a sanity check of its capacity).
    pub freeze_generator: bool,
    pub max_steps: usize,
    pub seed: u64,
    pub clip_range: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Polar,
            latent_dim: 64,
            base_channels: 8,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            objective: GanObjective::Relativistic,
            freeze_generator: false,
            max_steps: 1000,
            seed: 0,
            clip_range: 80.0,
        }
    }
}

impl GanConfig {
    pub fn arch(&self) -> ArchSpec {
        ArchSpec::new(self.representation, self.latent_dim, self.base_channels)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanCurvePoint {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// `mean σ(r − f̄) − mean σ(f − r̄)` on the discriminator batch.
    pub score_gap: f64,
    pub d_accuracy: f64,
}

pub struct GanRun {
    pub checkpoint: Checkpoint,
    pub curve: Vec<GanCurvePoint>,
}

/// Alternates one discriminator and one generator update per step.
pub fn train_gan(config: &GanConfig, train_cartesian: &[GridScan]) -> Result<GanRun> {
    config.arch().validate()?;
    if train_cartesian.is_empty() || config.batch_size == 0 {
        return Err(Error::Precondition("empty training stream or zero batch size".into()));
    }
    let (stats, cartesian_stats) = fit_stats(train_cartesian, config.representation, config.clip_range)?;
    let train = prepare(train_cartesian, config.representation, &stats)?;
    let mut gan = Gan::<f32>::init(config.arch(), seed::derive(config.seed, STREAM_INIT))?;
    let mut opt_g = Adam::new(config.adam(), &gan.generator);
    let mut opt_d = Adam::new(config.adam(), &gan.discriminator);
    let schedule = batch_schedule(train.len(), config.batch_size, config.max_steps, seed::derive(config.seed, STREAM_ORDER));
    let mut curve = Vec::with_capacity(config.max_steps);

    with_prefetch(&train, &schedule, |rx| -> Result<()> {
        for (step, batch) in rx.iter().enumerate() {
            let real = batch?.x;
            let n = real.batch();
            let z = gan.latents(n, seed::derive_path(config.seed, &[STREAM_LATENT, step as u64, 0]));
            let d = gan.discriminator_step(&real, &z, config.objective)?;
            if !d.d_loss.is_finite() || !d.grads.is_finite() {
                return Err(Error::Diverged { step, detail: format!("discriminator loss {}", d.d_loss) });
            }
            opt_d.update(&mut gan.discriminator, &d.grads);
            for tape in &d.tapes {
                gan.discriminator.commit(tape);
            }
            let g_loss = if config.freeze_generator {
                f64::NAN
            } else {
                let z = gan.latents(n, seed::derive_path(config.seed, &[STREAM_LATENT, step as u64, 1]));
                let g = gan.generator_step(&real, &z, config.objective)?;
                if !g.g_loss.is_finite() || !g.grads.is_finite() {
                    return Err(Error::Diverged { step, detail: format!("generator loss {}", g.g_loss) });
                }
                opt_g.update(&mut gan.generator, &g.grads);
                gan.generator.commit(&g.generator_tape);
                g.g_loss
            };
            curve.push(GanCurvePoint { step: step + 1, d_loss: d.d_loss, g_loss, score_gap: d.score_gap, d_accuracy: d.accuracy });
            log::debug!("step {}: d {:.4} g {:.4} gap {:.3}", step + 1, d.d_loss, g_loss, d.score_gap);
        }
        Ok(())
    })?;

    let mut checkpoint = Checkpoint::new(Model::Gan(gan), stats, cartesian_stats);
    checkpoint.config = serde_json::to_value(config).unwrap_or_default();
    checkpoint.step = curve.len() as u64;
    checkpoint.optimizers = vec![opt_g, opt_d];
    Ok(GanRun { checkpoint, curve })
}
