use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{ragan_d_grad, ragan_g_grad, relativistic_accuracy, score_gap, standard_d_grad, standard_g_grad};
use super::{check_grid, planes_to_grid, ArchSpec, Batch, FEATURE_BLOCK};
use crate::nn::{Grads, Scalar, Sequential, Tape, Tensor};
use crate::projection::GridScan;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanObjective {
    /// Relativistic average losses.
    #[default]
    Relativistic,
    /// The original minimax objective.
    Standard,
}

pub struct DiscriminatorStep<T> {
    pub d_loss: f64,
    pub score_gap: f64,
    pub accuracy: f64,
    pub grads: Grads<T>,
    pub tapes: [Tape<T>; 2],
}

pub struct GeneratorStep<T> {
    pub g_loss: f64,
    pub grads: Grads<T>,
    pub generator_tape: Tape<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gan<T> {
    pub arch: ArchSpec,
    pub generator: Sequential<T>,
    pub discriminator: Sequential<T>,
    /// Index of the last layer of each discriminator block.
    block_ends: Vec<usize>,
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data.iter().map(|v| v.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Tensor<T> {
    Tensor { shape: vec![v.len(), 1], data: v.iter().map(|&x| T::of(x)).collect() }
}

impl<T: Scalar> Gan<T> {
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed);
        let generator = Sequential::init(arch.decoder_layers(), &mut rng);
        let (kinds, block_ends) = arch.discriminator_layers();
        let discriminator = Sequential::init(kinds, &mut rng);
        Ok(Self { arch, generator, discriminator, block_ends })
    }

    pub fn from_parts(arch: ArchSpec, generator: Sequential<T>, discriminator: Sequential<T>) -> Self {
        let (_, block_ends) = arch.discriminator_layers();
        Self { arch, generator, discriminator, block_ends }
    }

    pub fn cast<U: Scalar>(&self) -> Gan<U> {
        Gan::from_parts(self.arch.clone(), self.generator.cast(), self.discriminator.cast())
    }

    /// `n` standard-normal latents drawn from `seed`.
    pub fn latents(&self, n: usize, seed: u64) -> Tensor<T> {
        let mut rng = seed::rng(seed);
        let zd = self.arch.latent_dim;
        let data = (0..n * zd).map(|_| T::of(StandardNormal.sample(&mut rng))).collect();
        Tensor { shape: vec![n, zd], data }
    }

    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape.len() != 2 || z.shape[1] != self.arch.latent_dim {
            return Err(Error::Shape(format!("latent batch {:?} does not have width {}", z.shape, self.arch.latent_dim)));
        }
        self.generator.infer(z)
    }

    /// `n` normalized samples from the prior.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<GridScan>> {
        let y = self.generate(&self.latents(n, seed))?;
        let a = &self.arch;
        Ok((0..n).map(|i| planes_to_grid(y.item(i), a.representation, a.height, a.width)).collect())
    }

    /// Pre-sigmoid score and the activations after each of the five blocks
    /// (inference mode).
    pub fn discriminator_forward(&self, grid: &GridScan) -> Result<(f64, Vec<Tensor<T>>)> {
        check_grid(&self.arch, grid)?;
        let batch = Batch::<T>::from_grids(&[grid])?;
        let (s, _, feats) = self.discriminator.forward_with_taps(&batch.x, false, false, &self.block_ends)?;
        Ok((s.data[0].as_f64(), feats))
    }

    /// Flattened third-block activations, one row per batch entry.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let upto = self.block_ends[FEATURE_BLOCK - 1];
        let head = Sequential { layers: self.discriminator.layers[..=upto].to_vec() };
        let f = head.infer(x)?;
        let n = f.batch();
        let per = f.per_item();
        Ok(f.reshaped(&[n, per]))
    }

    fn scores(&self, x: &Tensor<T>, keep: bool) -> Result<(Vec<f64>, Tape<T>)> {
        let (s, tape, _) = self.discriminator.forward_with_taps(x, true, keep, &[])?;
        Ok((to_f64(&s), tape))
    }

    /// Discriminator loss and gradients on a real batch and generated samples
    /// from `z` (all networks in training mode; the generator is not updated).
    pub fn discriminator_step(&self, real: &Tensor<T>, z: &Tensor<T>, objective: GanObjective) -> Result<DiscriminatorStep<T>> {
        let (fake, _, _) = self.generator.forward_with_taps(z, true, false, &[])?;
        let (sr, tape_r) = self.scores(real, true)?;
        let (sf, tape_f) = self.scores(&fake, true)?;
        let (d_loss, gr, gf) = match objective {
            GanObjective::Relativistic => ragan_d_grad(&sr, &sf),
            GanObjective::Standard => standard_d_grad(&sr, &sf),
        };
        let mut grads = self.discriminator.zero_grads();
        self.discriminator.backward(&tape_r, from_f64(&gr), &mut grads);
        self.discriminator.backward(&tape_f, from_f64(&gf), &mut grads);
        Ok(DiscriminatorStep {
            d_loss,
            score_gap: score_gap(&sr, &sf),
            accuracy: relativistic_accuracy(&sr, &sf),
            grads,
            tapes: [tape_r, tape_f],
        })
    }

    /// Generator loss and gradients; the discriminator is only read.
    pub fn generator_step(&self, real: &Tensor<T>, z: &Tensor<T>, objective: GanObjective) -> Result<GeneratorStep<T>> {
        let (fake, generator_tape) = self.generator.forward(z, true)?;
        let (sf, tape_f) = self.scores(&fake, true)?;
        let (g_loss, gf) = match objective {
            GanObjective::Relativistic => {
                let (sr, _) = self.scores(real, false)?;
                let (l, _, gf) = ragan_g_grad(&sr, &sf);
                (l, gf)
            }
            GanObjective::Standard => standard_g_grad(&sf),
        };
        let mut scratch = self.discriminator.zero_grads();
        let gfake = self.discriminator.backward(&tape_f, from_f64(&gf), &mut scratch);
        let mut grads = self.generator.zero_grads();
        self.generator.backward(&generator_tape, gfake, &mut grads);
        Ok(GeneratorStep { g_loss, grads, generator_tape })
    }
}
