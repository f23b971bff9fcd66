use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::kl_terms;
use super::{check_grid, planes_to_grid, ArchSpec, Batch};
use crate::nn::{Grads, Scalar, Sequential, Tape, Tensor};
use crate::projection::GridScan;
use crate::{seed, Error, Result};

/// Diagonal Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

fn noise(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `mu + exp(log_var / 2) ⊙ η` with `η ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(code: &LatentCode, seed: u64) -> Vec<f64> {
    let eta = noise(seed, code.mu.len());
    code.mu.iter().zip(&code.log_var).zip(eta).map(|((&m, &lv), e)| m + (0.5 * lv).exp() * e).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboParts {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Batch-mean ELBO terms with parameter gradients and the tapes needed to
/// commit batch-norm statistics.
pub struct ElboStep<T> {
    pub parts: ElboParts,
    pub encoder_grads: Grads<T>,
    pub decoder_grads: Grads<T>,
    pub encoder_tape: Tape<T>,
    pub decoder_tape: Tape<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    pub arch: ArchSpec,
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
}

impl<T: Scalar> Vae<T> {
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed);
        let encoder = Sequential::init(arch.encoder_layers(), &mut rng);
        let decoder = Sequential::init(arch.decoder_layers(), &mut rng);
        Ok(Self { arch, encoder, decoder })
    }

    pub fn cast<U: Scalar>(&self) -> Vae<U> {
        Vae { arch: self.arch.clone(), encoder: self.encoder.cast(), decoder: self.decoder.cast() }
    }

    fn split_code(&self, h: &Tensor<T>) -> Vec<LatentCode> {
        let z = self.arch.latent_dim;
        (0..h.batch())
            .map(|i| {
                let row = h.item(i);
                LatentCode {
                    mu: row[..z].iter().map(|v| v.as_f64()).collect(),
                    log_var: row[z..].iter().map(|v| v.as_f64()).collect(),
                }
            })
            .collect()
    }

    /// Posterior parameters for each batch entry (inference mode).
    pub fn encode_batch(&self, x: &Tensor<T>) -> Result<Vec<LatentCode>> {
        Ok(self.split_code(&self.encoder.infer(x)?))
    }

    pub fn encode(&self, grid: &GridScan) -> Result<LatentCode> {
        check_grid(&self.arch, grid)?;
        let batch = Batch::<T>::from_grids(&[grid])?;
        Ok(self.encode_batch(&batch.x)?.remove(0))
    }

    /// `N×z` latents to `N×C×H×W` decoder output (inference mode).
    pub fn decode_batch(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape.len() != 2 || z.shape[1] != self.arch.latent_dim {
            return Err(Error::Shape(format!("latent batch {:?} does not have width {}", z.shape, self.arch.latent_dim)));
        }
        self.decoder.infer(z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<GridScan> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::Shape(format!("latent has {} entries, expected {}", z.len(), self.arch.latent_dim)));
        }
        let t = Tensor::from_vec(&[1, z.len()], z.iter().map(|&v| T::of(v)).collect())?;
        let y = self.decode_batch(&t)?;
        Ok(planes_to_grid(y.item(0), self.arch.representation, self.arch.height, self.arch.width))
    }

    /// `n` normalized samples decoded from standard-normal latents drawn from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<GridScan>> {
        let mut rng = seed::rng(seed);
        let zd = self.arch.latent_dim;
        let data = (0..n * zd).map(|_| T::of(StandardNormal.sample(&mut rng))).collect();
        let y = self.decode_batch(&Tensor { shape: vec![n, zd], data })?;
        let a = &self.arch;
        Ok((0..n).map(|i| planes_to_grid(y.item(i), a.representation, a.height, a.width)).collect())
    }

    /// Encodes to the posterior mean and decodes, in inference mode.
    pub fn reconstruct_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.encoder.infer(x)?;
        let z = self.arch.latent_dim;
        let mut mu = Tensor::zeros(&[h.batch(), z]);
        for i in 0..h.batch() {
            mu.item_mut(i).copy_from_slice(&h.item(i)[..z]);
        }
        self.decoder.infer(&mu)
    }

    /// Batch-mean `recon + beta·KL`, one reparameterization seed per entry.
    /// `train` selects batch statistics for batch norm.
    pub fn elbo(&self, batch: &Batch<T>, seeds: &[u64], beta: f64, masked: bool, train: bool) -> Result<ElboStep<T>> {
        let n = batch.len();
        if seeds.len() != n {
            return Err(Error::Shape(format!("{} seeds for a batch of {n}", seeds.len())));
        }
        let zd = self.arch.latent_dim;
        let (h, encoder_tape) = self.encoder.forward(&batch.x, train)?;
        let mut z = Tensor::zeros(&[n, zd]);
        let mut etas = Vec::with_capacity(n);
        let mut kl_sum = 0.0;
        for i in 0..n {
            let row: Vec<f64> = h.item(i).iter().map(|v| v.as_f64()).collect();
            let (mu, lv) = row.split_at(zd);
            let eta = noise(seeds[i], zd);
            for k in 0..zd {
                z.item_mut(i)[k] = T::of(mu[k] + (0.5 * lv[k]).exp() * eta[k]);
            }
            kl_sum += kl_terms(mu, lv);
            etas.push(eta);
        }
        let (y, decoder_tape) = self.decoder.forward(&z, train)?;

        let c = self.arch.channels();
        let hw = self.arch.height * self.arch.width;
        let nf = n as f64;
        let mut gy = y.zeros_like();
        let mut recon_sum = 0.0;
        for i in 0..n {
            let mask = &batch.mask[i * hw..(i + 1) * hw];
            let count = if masked { mask.iter().filter(|&&m| m).count() * c } else { hw * c };
            if count == 0 {
                continue;
            }
            let (yi, xi) = (y.item(i), batch.x.item(i));
            let gi = gy.item_mut(i);
            let scale = 2.0 / (count as f64 * nf);
            let mut s = 0.0;
            for k in 0..c {
                for cell in 0..hw {
                    if masked && !mask[cell] {
                        continue;
                    }
                    let e = k * hw + cell;
                    let d = yi[e].as_f64() - xi[e].as_f64();
                    s += d * d;
                    gi[e] = T::of(scale * d);
                }
            }
            recon_sum += s / count as f64;
        }
        let mut decoder_grads = self.decoder.zero_grads();
        let gz = self.decoder.backward(&decoder_tape, gy, &mut decoder_grads);

        let mut gh = h.zeros_like();
        for i in 0..n {
            let row: Vec<f64> = h.item(i).iter().map(|v| v.as_f64()).collect();
            let (mu, lv) = row.split_at(zd);
            let g = gh.item_mut(i);
            for k in 0..zd {
                let gzk = gz.item(i)[k].as_f64();
                let sd = (0.5 * lv[k]).exp();
                g[k] = T::of(gzk + beta * mu[k] / nf);
                g[zd + k] = T::of(gzk * 0.5 * sd * etas[i][k] + beta * 0.5 * (lv[k].exp() - 1.0) / nf);
            }
        }
        let mut encoder_grads = self.encoder.zero_grads();
        self.encoder.backward(&encoder_tape, gh, &mut encoder_grads);

        let (recon, kl) = (recon_sum / nf, kl_sum / nf);
        Ok(ElboStep {
            parts: ElboParts { loss: recon + beta * kl, recon, kl },
            encoder_grads,
            decoder_grads,
            encoder_tape,
            decoder_tape,
        })
    }
}
