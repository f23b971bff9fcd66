//! Convolutional VAE and GAN over projected grids.
//!
//! The decoder/generator maps a latent vector through a linear layer to a
//! small `h0 × w0` feature map and upsamples it with five transposed
//! convolutions. The discriminator mirrors that schedule with strided
//! convolutions; the VAE encoder reuses its first four blocks.

mod checkpoint;
mod gan;
mod losses;
mod vae;

pub use checkpoint::{Checkpoint, Model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gan::{DiscriminatorStep, Gan, GanObjective, GeneratorStep};
pub use losses::{
    kl_divergence, ragan_losses, recon_loss, relativistic_accuracy, score_gap, softplus, standard_gan_losses, sigmoid,
};
pub use vae::{reparameterize, ElboParts, ElboStep, LatentCode, Vae};

use serde::{Deserialize, Serialize};

use crate::nn::{LayerKind, Scalar, Tensor};
use crate::projection::{GridScan, Representation};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const NUM_BLOCKS: usize = 5;
/// Discriminator block whose activations are used as matching features.
pub const FEATURE_BLOCK: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub height: usize,
    pub width: usize,
    pub representation: Representation,
    pub latent_dim: usize,
    pub base_channels: usize,
    /// Per-axis `(row, column)` strides of the five decoder layers, in
    /// decoder order. The discriminator uses them reversed.
    pub strides: Vec<(usize, usize)>,
}

impl ArchSpec {
    pub const DEFAULT_STRIDES: [(usize, usize); NUM_BLOCKS] = [(1, 2), (1, 2), (2, 2), (2, 2), (2, 2)];

    /// The 40 × 256 architecture.
    pub fn new(representation: Representation, latent_dim: usize, base_channels: usize) -> Self {
        Self {
            height: 40,
            width: 256,
            representation,
            latent_dim,
            base_channels,
            strides: Self::DEFAULT_STRIDES.to_vec(),
        }
    }

    /// A 4 × 8 network small enough for finite-difference checks.
    pub fn miniature(representation: Representation) -> Self {
        Self {
            height: 4,
            width: 8,
            representation,
            latent_dim: 3,
            base_channels: 1,
            strides: vec![(1, 2), (1, 2), (2, 2), (2, 1), (1, 1)],
        }
    }

    pub fn channels(&self) -> usize {
        self.representation.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(format!("invalid architecture: {m}")));
        if self.latent_dim == 0 || self.base_channels == 0 {
            return bad("latent_dim and base_channels must be positive".into());
        }
        if self.strides.len() != NUM_BLOCKS {
            return bad(format!("need {NUM_BLOCKS} stride pairs, got {}", self.strides.len()));
        }
        if self.strides.iter().any(|&(a, b)| !(1..=2).contains(&a) || !(1..=2).contains(&b)) {
            return bad("strides must be 1 or 2".into());
        }
        let (sh, sw) = self.total_stride();
        if self.height % sh != 0 || self.width % sw != 0 || self.height == 0 || self.width == 0 {
            return bad(format!("{}x{} is not divisible by the total stride {sh}x{sw}", self.height, self.width));
        }
        let last = self.decoder_spatial().last().copied();
        if last != Some((self.height, self.width)) {
            return bad(format!("decoder schedule ends at {last:?}"));
        }
        Ok(())
    }

    fn total_stride(&self) -> (usize, usize) {
        self.strides.iter().fold((1, 1), |(a, b), &(x, y)| (a * x, b * y))
    }

    /// Spatial size of the decoder's seed feature map.
    pub fn seed_shape(&self) -> (usize, usize) {
        let (sh, sw) = self.total_stride();
        (self.height / sh, self.width / sw)
    }

    /// Spatial sizes along the decoder, seed map first.
    pub fn decoder_spatial(&self) -> Vec<(usize, usize)> {
        let mut cur = self.seed_shape();
        let mut out = vec![cur];
        for &(a, b) in &self.strides {
            cur = (cur.0 * a, cur.1 * b);
            out.push(cur);
        }
        out
    }

    /// Spatial size after each discriminator block.
    pub fn discriminator_spatial(&self) -> Vec<(usize, usize)> {
        let mut v = self.decoder_spatial();
        v.reverse();
        v.remove(0);
        v
    }

    /// Output channels of each discriminator block.
    pub fn discriminator_channels(&self) -> [usize; NUM_BLOCKS] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 8 * b, 8 * b]
    }

    /// `(channels, height, width)` of the activations after discriminator
    /// block `block` (1-based).
    pub fn feature_shape(&self, block: usize) -> (usize, usize, usize) {
        let (h, w) = self.discriminator_spatial()[block - 1];
        (self.discriminator_channels()[block - 1], h, w)
    }

    pub fn decoder_layers(&self) -> Vec<LayerKind> {
        let b = self.base_channels;
        let (h0, w0) = self.seed_shape();
        let ins = [8 * b, 8 * b, 4 * b, 2 * b, b];
        let outs = [8 * b, 4 * b, 2 * b, b, self.channels()];
        let mut layers = vec![
            LayerKind::Linear { in_features: self.latent_dim, out_features: 8 * b * h0 * w0, bias: false },
            LayerKind::Reshape { shape: vec![8 * b, h0, w0] },
            LayerKind::BatchNorm2d { channels: 8 * b, eps: BN_EPS, momentum: BN_MOMENTUM },
            LayerKind::Relu,
        ];
        for i in 0..NUM_BLOCKS {
            let last = i + 1 == NUM_BLOCKS;
            let (kernel, pad) = kernel_for(self.strides[i]);
            layers.push(LayerKind::ConvTranspose2d {
                in_channels: ins[i],
                out_channels: outs[i],
                kernel,
                stride: self.strides[i],
                pad,
                bias: last,
            });
            if last {
                layers.push(LayerKind::Tanh);
            } else {
                layers.push(LayerKind::BatchNorm2d { channels: outs[i], eps: BN_EPS, momentum: BN_MOMENTUM });
                layers.push(LayerKind::Relu);
            }
        }
        layers
    }

    /// Convolution blocks `1..=blocks` of the discriminator, and the index of
    /// the last layer of each block.
    pub fn discriminator_blocks(&self, blocks: usize) -> (Vec<LayerKind>, Vec<usize>) {
        let outs = self.discriminator_channels();
        let mut layers = Vec::new();
        let mut ends = Vec::new();
        let mut in_c = self.channels();
        for i in 0..blocks {
            let stride = self.strides[NUM_BLOCKS - 1 - i];
            let (kernel, pad) = kernel_for(stride);
            let first = i == 0;
            layers.push(LayerKind::Conv2d { in_channels: in_c, out_channels: outs[i], kernel, stride, pad, bias: first });
            if !first {
                layers.push(LayerKind::BatchNorm2d { channels: outs[i], eps: BN_EPS, momentum: BN_MOMENTUM });
            }
            layers.push(LayerKind::LeakyRelu { slope: LEAKY_SLOPE });
            ends.push(layers.len() - 1);
            in_c = outs[i];
        }
        (layers, ends)
    }

    pub fn discriminator_layers(&self) -> (Vec<LayerKind>, Vec<usize>) {
        let (mut layers, ends) = self.discriminator_blocks(NUM_BLOCKS);
        let (c, h, w) = self.feature_shape(NUM_BLOCKS);
        layers.push(LayerKind::Linear { in_features: c * h * w, out_features: 1, bias: true });
        (layers, ends)
    }

    pub fn encoder_layers(&self) -> Vec<LayerKind> {
        let (mut layers, _) = self.discriminator_blocks(4);
        let (c, h, w) = self.feature_shape(4);
        layers.push(LayerKind::Linear { in_features: c * h * w, out_features: 2 * self.latent_dim, bias: true });
        layers
    }
}

/// Stride-2 axes use a 4-tap kernel, stride-1 axes a 3-tap kernel; both with
/// one cell of padding, so each layer exactly halves/doubles or preserves size.
fn kernel_for(stride: (usize, usize)) -> ((usize, usize), (usize, usize)) {
    let k = |s: usize| if s == 2 { 4 } else { 3 };
    ((k(stride.0), k(stride.1)), (1, 1))
}

/// A batch of normalized grids as an `N×C×H×W` tensor plus occupancy masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    /// `N×H×W`.
    pub mask: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_grids(grids: &[&GridScan]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.num_channels());
        let mut x = Tensor::zeros(&[grids.len(), c, h, w]);
        let mut mask = Vec::with_capacity(grids.len() * h * w);
        for (n, g) in grids.iter().enumerate() {
            if (g.height, g.width, g.representation) != (h, w, first.representation) {
                return Err(Error::Shape("batch mixes grid shapes".into()));
            }
            grid_into(g, x.item_mut(n));
            mask.extend_from_slice(&g.mask);
        }
        Ok(Self { x, mask })
    }

    pub fn len(&self) -> usize {
        self.x.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let hw = self.x.shape[2] * self.x.shape[3];
        let mut mask = Vec::with_capacity(idx.len() * hw);
        for &i in idx {
            mask.extend_from_slice(&self.mask[i * hw..(i + 1) * hw]);
        }
        Self { x: self.x.select(idx), mask }
    }
}

/// Writes an interleaved `H×W×C` grid as planar `C×H×W` into `out`.
pub fn grid_into<T: Scalar>(g: &GridScan, out: &mut [T]) {
    let (hw, c) = (g.cells(), g.num_channels());
    for cell in 0..hw {
        for k in 0..c {
            out[k * hw + cell] = T::of(g.channels[cell * c + k] as f64);
        }
    }
}

/// Inverse of [`grid_into`]; the result is a normalized, fully occupied grid.
pub fn planes_to_grid<T: Scalar>(planes: &[T], representation: Representation, height: usize, width: usize) -> GridScan {
    let mut g = GridScan::empty(representation, height, width);
    let (hw, c) = (g.cells(), g.num_channels());
    for cell in 0..hw {
        for k in 0..c {
            g.channels[cell * c + k] = planes[k * hw + cell].as_f64() as f32;
        }
    }
    g.mask.fill(true);
    g.normalized = true;
    g
}

pub fn check_grid(arch: &ArchSpec, g: &GridScan) -> Result<()> {
    if (g.height, g.width, g.representation) != (arch.height, arch.width, arch.representation) {
        return Err(Error::Shape(format!(
            "{}x{} {} grid does not match the {}x{} {} architecture",
            g.height, g.width, g.representation, arch.height, arch.width, arch.representation
        )));
    }
    if !g.normalized {
        return Err(Error::Precondition("model input must be normalized".into()));
    }
    Ok(())
}
