use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{col2im, im2col, ConvGeometry};
use super::tensor::{gemm, Scalar, Tensor};
use crate::{Error, Result};

/// Standard deviation of the Gaussian weight initialisation.
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    },
    /// Weight layout `[in, out, kh, kw]`.
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    },
    BatchNorm2d {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    /// Flattens everything after the batch axis.
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Tanh,
    /// Per-item target shape.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerKind {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerKind::Conv2d { bias: true, .. }
            | LayerKind::ConvTranspose2d { bias: true, .. }
            | LayerKind::Linear { bias: true, .. }
            | LayerKind::BatchNorm2d { .. } => &["weight", "bias"],
            LayerKind::Conv2d { .. } | LayerKind::ConvTranspose2d { .. } | LayerKind::Linear { .. } => &["weight"],
            _ => &[],
        }
    }

    pub fn buffer_names(&self) -> &'static [&'static str] {
        match self {
            LayerKind::BatchNorm2d { .. } => &["running_mean", "running_var"],
            _ => &[],
        }
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, bias, .. } => {
                let mut v = vec![vec![out_channels, in_channels, kernel.0, kernel.1]];
                if bias {
                    v.push(vec![out_channels]);
                }
                v
            }
            LayerKind::ConvTranspose2d { in_channels, out_channels, kernel, bias, .. } => {
                let mut v = vec![vec![in_channels, out_channels, kernel.0, kernel.1]];
                if bias {
                    v.push(vec![out_channels]);
                }
                v
            }
            LayerKind::Linear { in_features, out_features, bias } => {
                let mut v = vec![vec![out_features, in_features]];
                if bias {
                    v.push(vec![out_features]);
                }
                v
            }
            LayerKind::BatchNorm2d { channels, .. } => vec![vec![channels], vec![channels]],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Gaussian(0, 0.02) weights, zero biases, batch-norm scale Gaussian(1, 0.02).
    pub fn init(kind: LayerKind, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let shapes = kind.param_shapes();
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let mut t = Tensor::zeros(shape);
                match (&kind, i) {
                    (LayerKind::BatchNorm2d { .. }, 0) => {
                        t.data.iter_mut().for_each(|v| *v = T::of(1.0 + normal.sample(rng)))
                    }
                    (_, 0) => t.data.iter_mut().for_each(|v| *v = T::of(normal.sample(rng))),
                    _ => {}
                }
                t
            })
            .collect();
        let buffers = match kind {
            LayerKind::BatchNorm2d { channels, .. } => {
                vec![Tensor::zeros(&[channels]), Tensor::filled(&[channels], T::one())]
            }
            _ => vec![],
        };
        Self { kind, params, buffers }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            kind: self.kind.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }
}

enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Norm { xhat: Tensor<T>, inv_std: Vec<T>, batch_stats: Option<(Vec<f64>, Vec<f64>, usize)> },
    Shape(Vec<usize>),
}

/// Saved activations of one forward pass, consumed by `backward`.
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

/// Gradients laid out like `Sequential::layers[i].params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.layers.iter_mut().flatten().for_each(|t| t.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(Tensor::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

fn shape_err(kind: &LayerKind, got: &[usize]) -> Error {
    Error::Shape(format!("{kind:?} cannot take input of shape {got:?}"))
}

impl<T: Scalar> Sequential<T> {
    pub fn init(kinds: Vec<LayerKind>, rng: &mut impl Rng) -> Self {
        Self { layers: kinds.into_iter().map(|k| Layer::init(k, rng)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential { layers: self.layers.iter().map(Layer::cast).collect() }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { layers: self.layers.iter().map(|l| l.params.iter().map(Tensor::zeros_like).collect()).collect() }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum()
    }

    /// `(name, tensor)` for every parameter, then every buffer, named
    /// `"{layer}.{name}"`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in l.kind.param_names().iter().zip(&l.params) {
                out.push((format!("{i}.{n}"), t));
            }
            for (n, t) in l.kind.buffer_names().iter().zip(&l.buffers) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let kind = &l.kind;
            for (n, t) in kind.param_names().iter().zip(l.params.iter_mut()) {
                out.push((format!("{i}.{n}"), t));
            }
            for (n, t) in kind.buffer_names().iter().zip(l.buffers.iter_mut()) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params.iter().chain(&l.buffers).all(Tensor::is_finite))
    }

    /// Inference without keeping a tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false, false, &[])?.0)
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, Tape<T>)> {
        let (y, tape, _) = self.run(x, train, true, &[])?;
        Ok((y, tape))
    }

    /// Like `forward`, also returning copies of the outputs of the layers
    /// listed in `taps`.
    pub fn forward_with_taps(
        &self,
        x: &Tensor<T>,
        train: bool,
        keep_tape: bool,
        taps: &[usize],
    ) -> Result<(Tensor<T>, Tape<T>, Vec<Tensor<T>>)> {
        self.run(x, train, keep_tape, taps)
    }

    fn run(&self, x: &Tensor<T>, train: bool, keep: bool, taps: &[usize]) -> Result<(Tensor<T>, Tape<T>, Vec<Tensor<T>>)> {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut tapped = Vec::with_capacity(taps.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = forward_layer(layer, cur, train)?;
            if keep {
                caches.push(cache);
            }
            if taps.contains(&i) {
                tapped.push(y.clone());
            }
            cur = y;
        }
        Ok((cur, Tape { caches }, tapped))
    }

    /// Back-propagates `gy` through the recorded pass, accumulating parameter
    /// gradients into `grads` and returning the input gradient.
    pub fn backward(&self, tape: &Tape<T>, gy: Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        assert_eq!(tape.caches.len(), self.layers.len(), "tape recorded without keep");
        let mut g = gy;
        for i in (0..self.layers.len()).rev() {
            g = backward_layer(&self.layers[i], &tape.caches[i], g, &mut grads.layers[i]);
        }
        g
    }

    /// Folds the batch statistics recorded in a training pass into the
    /// batch-norm running averages.
    pub fn commit(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (LayerKind::BatchNorm2d { momentum, .. }, Cache::Norm { batch_stats: Some((mean, var, m)), .. }) =
                (&layer.kind, cache)
            {
                let unbias = if *m > 1 { *m as f64 / (*m as f64 - 1.0) } else { 1.0 };
                let (rm, rv) = layer.buffers.split_at_mut(1);
                for c in 0..mean.len() {
                    let old_m = rm[0].data[c].as_f64();
                    let old_v = rv[0].data[c].as_f64();
                    rm[0].data[c] = T::of((1.0 - momentum) * old_m + momentum * mean[c]);
                    rv[0].data[c] = T::of((1.0 - momentum) * old_v + momentum * var[c] * unbias);
                }
            }
        }
    }
}

fn conv_geometry<T: Scalar>(x: &Tensor<T>, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> ConvGeometry {
    ConvGeometry { channels: x.shape[1], height: x.shape[2], width: x.shape[3], kernel, stride, pad }
}

/// Geometry of the convolution whose adjoint is the transposed convolution
/// taking `x` to its output.
fn transposed_geometry(
    out_channels: usize,
    in_h: usize,
    in_w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Option<ConvGeometry> {
    let h = ((in_h - 1) * stride.0 + kernel.0).checked_sub(2 * pad.0)?;
    let w = ((in_w - 1) * stride.1 + kernel.1).checked_sub(2 * pad.1)?;
    let g = ConvGeometry { channels: out_channels, height: h, width: w, kernel, stride, pad };
    (g.valid() && g.out_height() == in_h && g.out_width() == in_w).then_some(g)
}

fn forward_layer<T: Scalar>(layer: &Layer<T>, x: Tensor<T>, train: bool) -> Result<(Tensor<T>, Cache<T>)> {
    let p = &layer.params;
    match layer.kind {
        LayerKind::Conv2d { in_channels, out_channels, kernel, stride, pad, bias } => {
            if x.shape.len() != 4 || x.shape[1] != in_channels {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let g = conv_geometry(&x, kernel, stride, pad);
            if !g.valid() {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let (n, k, pos) = (x.batch(), g.patch_len(), g.positions());
            let mut y = Tensor::zeros(&[n, out_channels, g.out_height(), g.out_width()]);
            let mut cols = vec![T::zero(); k * pos];
            for b in 0..n {
                im2col(x.item(b), &g, &mut cols);
                let yb = y.item_mut(b);
                gemm(false, false, out_channels, pos, k, &p[0].data, &cols, T::zero(), yb);
                if bias {
                    add_channel_bias(yb, &p[1].data, pos);
                }
            }
            Ok((y, Cache::Input(x)))
        }
        LayerKind::ConvTranspose2d { in_channels, out_channels, kernel, stride, pad, bias } => {
            if x.shape.len() != 4 || x.shape[1] != in_channels {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let g = transposed_geometry(out_channels, x.shape[2], x.shape[3], kernel, stride, pad)
                .ok_or_else(|| shape_err(&layer.kind, &x.shape))?;
            let (n, k, pos) = (x.batch(), g.patch_len(), g.positions());
            let mut y = Tensor::zeros(&[n, out_channels, g.height, g.width]);
            let mut cols = vec![T::zero(); k * pos];
            for b in 0..n {
                gemm(true, false, k, pos, in_channels, &p[0].data, x.item(b), T::zero(), &mut cols);
                let yb = y.item_mut(b);
                col2im(&cols, &g, yb);
                if bias {
                    add_channel_bias(yb, &p[1].data, g.height * g.width);
                }
            }
            Ok((y, Cache::Input(x)))
        }
        LayerKind::Linear { in_features, out_features, bias } => {
            if x.shape.len() < 2 || x.per_item() != in_features {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let n = x.batch();
            let mut y = Tensor::zeros(&[n, out_features]);
            gemm(false, true, n, out_features, in_features, &x.data, &p[0].data, T::zero(), &mut y.data);
            if bias {
                for b in 0..n {
                    y.item_mut(b).iter_mut().zip(&p[1].data).for_each(|(v, &c)| *v += c);
                }
            }
            Ok((y, Cache::Input(x)))
        }
        LayerKind::BatchNorm2d { channels, eps, .. } => {
            if x.shape.len() < 2 || x.shape[1] != channels {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let n = x.batch();
            let hw = x.per_item() / channels;
            let m = n * hw;
            let (mean, var) = if train {
                let mut mean = vec![0.0f64; channels];
                let mut var = vec![0.0f64; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += x.item(b)[c * hw..(c + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0;
                    for b in 0..n {
                        ss += x.item(b)[c * hw..(c + 1) * hw].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
                    }
                    mean[c] = mu;
                    var[c] = ss / m as f64;
                }
                (mean, var)
            } else {
                (
                    layer.buffers[0].data.iter().map(|v| v.as_f64()).collect(),
                    layer.buffers[1].data.iter().map(|v| v.as_f64()).collect(),
                )
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
            let mut xhat = x;
            let mut y = xhat.zeros_like();
            for b in 0..n {
                let xb = xhat.item_mut(b);
                for c in 0..channels {
                    let mu = T::of(mean[c]);
                    xb[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = (*v - mu) * inv_std[c]);
                }
                let xb = xhat.item(b);
                let yb = y.item_mut(b);
                for c in 0..channels {
                    let (gamma, beta) = (p[0].data[c], p[1].data[c]);
                    for (o, &v) in yb[c * hw..(c + 1) * hw].iter_mut().zip(&xb[c * hw..(c + 1) * hw]) {
                        *o = gamma * v + beta;
                    }
                }
            }
            let batch_stats = train.then_some((mean, var, m));
            Ok((y, Cache::Norm { xhat, inv_std, batch_stats }))
        }
        LayerKind::LeakyRelu { slope } => {
            let s = T::of(slope);
            let mut y = x;
            y.data.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v *= s
                }
            });
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerKind::Relu => {
            let mut y = x;
            y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerKind::Tanh => {
            let mut y = x;
            y.data.iter_mut().for_each(|v| *v = v.tanh());
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerKind::Reshape { ref shape } => {
            if x.shape.is_empty() || shape.iter().product::<usize>() != x.per_item() {
                return Err(shape_err(&layer.kind, &x.shape));
            }
            let old = x.shape.clone();
            let mut full = vec![x.batch()];
            full.extend_from_slice(shape);
            Ok((x.reshaped(&full), Cache::Shape(old)))
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        y[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_bias<T: Scalar>(gy: &[T], gb: &mut [T], plane: usize) {
    for (c, g) in gb.iter_mut().enumerate() {
        *g += gy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

fn backward_layer<T: Scalar>(layer: &Layer<T>, cache: &Cache<T>, gy: Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
    let p = &layer.params;
    match (&layer.kind, cache) {
        (&LayerKind::Conv2d { out_channels, kernel, stride, pad, bias, .. }, Cache::Input(x)) => {
            let g = conv_geometry(x, kernel, stride, pad);
            let (k, pos) = (g.patch_len(), g.positions());
            let mut gx = x.zeros_like();
            let mut cols = vec![T::zero(); k * pos];
            let mut gcols = vec![T::zero(); k * pos];
            for b in 0..x.batch() {
                let gyb = gy.item(b);
                im2col(x.item(b), &g, &mut cols);
                gemm(false, true, out_channels, k, pos, gyb, &cols, T::one(), &mut grads[0].data);
                if bias {
                    accumulate_channel_bias(gyb, &mut grads[1].data, pos);
                }
                gemm(true, false, k, pos, out_channels, &p[0].data, gyb, T::zero(), &mut gcols);
                col2im(&gcols, &g, gx.item_mut(b));
            }
            gx
        }
        (&LayerKind::ConvTranspose2d { in_channels, out_channels, kernel, stride, pad, bias }, Cache::Input(x)) => {
            let g = transposed_geometry(out_channels, x.shape[2], x.shape[3], kernel, stride, pad).expect("checked in forward");
            let (k, pos) = (g.patch_len(), g.positions());
            let mut gx = x.zeros_like();
            let mut gcols = vec![T::zero(); k * pos];
            for b in 0..x.batch() {
                let gyb = gy.item(b);
                im2col(gyb, &g, &mut gcols);
                gemm(false, false, in_channels, pos, k, &p[0].data, &gcols, T::zero(), gx.item_mut(b));
                gemm(false, true, in_channels, k, pos, x.item(b), &gcols, T::one(), &mut grads[0].data);
                if bias {
                    accumulate_channel_bias(gyb, &mut grads[1].data, g.height * g.width);
                }
            }
            gx
        }
        (&LayerKind::Linear { in_features, out_features, bias }, Cache::Input(x)) => {
            let n = x.batch();
            gemm(true, false, out_features, in_features, n, &gy.data, &x.data, T::one(), &mut grads[0].data);
            if bias {
                for b in 0..n {
                    grads[1].data.iter_mut().zip(gy.item(b)).for_each(|(g, &v)| *g += v);
                }
            }
            let mut gx = x.zeros_like();
            gemm(false, false, n, in_features, out_features, &gy.data, &p[0].data, T::zero(), &mut gx.data);
            gx
        }
        (&LayerKind::BatchNorm2d { channels, .. }, Cache::Norm { xhat, inv_std, batch_stats }) => {
            let n = xhat.batch();
            let hw = xhat.per_item() / channels;
            let m = T::of((n * hw) as f64);
            let mut sum_gy = vec![T::zero(); channels];
            let mut sum_gy_xhat = vec![T::zero(); channels];
            for b in 0..n {
                let (gb, xb) = (gy.item(b), xhat.item(b));
                for c in 0..channels {
                    let r = c * hw..(c + 1) * hw;
                    for (&g, &xh) in gb[r.clone()].iter().zip(&xb[r]) {
                        sum_gy[c] += g;
                        sum_gy_xhat[c] += g * xh;
                    }
                }
            }
            for c in 0..channels {
                grads[0].data[c] += sum_gy_xhat[c];
                grads[1].data[c] += sum_gy[c];
            }
            let mut gx = gy;
            for b in 0..n {
                let gb = gx.item_mut(b);
                let xb = xhat.item(b);
                for c in 0..channels {
                    let r = c * hw..(c + 1) * hw;
                    let scale = p[0].data[c] * inv_std[c];
                    if batch_stats.is_some() {
                        let (sg, sgx) = (sum_gy[c] / m, sum_gy_xhat[c] / m);
                        for (g, &xh) in gb[r.clone()].iter_mut().zip(&xb[r]) {
                            *g = scale * (*g - sg - xh * sgx);
                        }
                    } else {
                        gb[r].iter_mut().for_each(|g| *g *= scale);
                    }
                }
            }
            gx
        }
        (&LayerKind::LeakyRelu { slope }, Cache::Output(y)) => {
            let s = T::of(slope);
            let mut gx = gy;
            gx.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
                if v < T::zero() {
                    *g *= s
                }
            });
            gx
        }
        (LayerKind::Relu, Cache::Output(y)) => {
            let mut gx = gy;
            gx.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
                if v <= T::zero() {
                    *g = T::zero()
                }
            });
            gx
        }
        (LayerKind::Tanh, Cache::Output(y)) => {
            let mut gx = gy;
            gx.data.iter_mut().zip(&y.data).for_each(|(g, &v)| *g *= T::one() - v * v);
            gx
        }
        (LayerKind::Reshape { .. }, Cache::Shape(old)) => gy.reshaped(old),
        _ => unreachable!("cache does not match layer"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    /// Sum of `w ⊙ y` as the scalar objective, so `dL/dy = w`.
    fn objective(net: &Sequential<f64>, x: &Tensor<f64>, w: &[f64]) -> f64 {
        let (y, _) = net.forward(x, true).unwrap();
        y.data.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_grads(kinds: Vec<LayerKind>, in_shape: &[usize]) {
        let mut rng = seed::rng(11);
        let mut net = Sequential::<f64>::init(kinds, &mut rng);
        // Larger weights than the default init, so every path matters.
        for l in &mut net.layers {
            for t in &mut l.params {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
            }
        }
        let x = Tensor::from_vec(in_shape, (0..in_shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (y, tape) = net.forward(&x, true).unwrap();
        let w: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grads = net.zero_grads();
        let gx = net.backward(&tape, Tensor::from_vec(&y.shape, w.clone()).unwrap(), &mut grads);
        let h = 1e-6;
        let close = |a: f64, n: f64, what: &str| {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "{what}: analytic {a} numeric {n}");
        };
        for li in 0..net.layers.len() {
            for pi in 0..net.layers[li].params.len() {
                for e in 0..net.layers[li].params[pi].len() {
                    let orig = net.layers[li].params[pi].data[e];
                    net.layers[li].params[pi].data[e] = orig + h;
                    let up = objective(&net, &x, &w);
                    net.layers[li].params[pi].data[e] = orig - h;
                    let down = objective(&net, &x, &w);
                    net.layers[li].params[pi].data[e] = orig;
                    close(grads.layers[li][pi].data[e], (up - down) / (2.0 * h), &format!("layer {li} param {pi}[{e}]"));
                }
            }
        }
        for e in 0..x.len() {
            let mut xp = x.clone();
            xp.data[e] += h;
            let up = objective(&net, &xp, &w);
            xp.data[e] -= 2.0 * h;
            let down = objective(&net, &xp, &w);
            close(gx.data[e], (up - down) / (2.0 * h), &format!("input[{e}]"));
        }
    }

    #[test]
    fn conv_linear_chain_gradients() {
        check_grads(
            vec![
                LayerKind::Conv2d { in_channels: 2, out_channels: 3, kernel: (4, 4), stride: (2, 2), pad: (1, 1), bias: true },
                LayerKind::Tanh,
                LayerKind::Conv2d { in_channels: 3, out_channels: 2, kernel: (3, 4), stride: (1, 2), pad: (1, 1), bias: false },
                LayerKind::Linear { in_features: 2 * 2 * 2, out_features: 3, bias: true },
            ],
            &[2, 2, 4, 8],
        );
    }

    #[test]
    fn transposed_conv_batchnorm_gradients() {
        check_grads(
            vec![
                LayerKind::Linear { in_features: 3, out_features: 8, bias: false },
                LayerKind::Reshape { shape: vec![2, 2, 2] },
                LayerKind::BatchNorm2d { channels: 2, eps: 1e-5, momentum: 0.1 },
                LayerKind::Tanh,
                LayerKind::ConvTranspose2d { in_channels: 2, out_channels: 3, kernel: (3, 4), stride: (1, 2), pad: (1, 1), bias: false },
                LayerKind::BatchNorm2d { channels: 3, eps: 1e-5, momentum: 0.1 },
                LayerKind::Tanh,
                LayerKind::ConvTranspose2d { in_channels: 3, out_channels: 2, kernel: (4, 4), stride: (2, 2), pad: (1, 1), bias: true },
            ],
            &[3, 3],
        );
    }

    #[test]
    fn transposed_conv_upsamples() {
        let mut rng = seed::rng(1);
        let net = Sequential::<f32>::init(
            vec![LayerKind::ConvTranspose2d { in_channels: 4, out_channels: 2, kernel: (4, 4), stride: (2, 2), pad: (1, 1), bias: true }],
            &mut rng,
        );
        let y = net.infer(&Tensor::zeros(&[3, 4, 5, 8])).unwrap();
        assert_eq!(y.shape, vec![3, 2, 10, 16]);
        assert!(net.infer(&Tensor::zeros(&[3, 5, 5, 8])).is_err());
    }

    #[test]
    fn batchnorm_running_stats() {
        let mut rng = seed::rng(1);
        let mut net = Sequential::<f64>::init(vec![LayerKind::BatchNorm2d { channels: 1, eps: 0.0, momentum: 0.5 }], &mut rng);
        net.layers[0].params[0].data[0] = 1.0;
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, tape) = net.forward(&x, true).unwrap();
        let mean: f64 = y.data.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        net.commit(&tape);
        // mean 2.5, unbiased var 5/3
        assert!((net.layers[0].buffers[0].data[0] - 1.25).abs() < 1e-12);
        assert!((net.layers[0].buffers[1].data[0] - (0.5 + 0.5 * 5.0 / 3.0)).abs() < 1e-12);
        // Inference ignores the batch: a zero input stays finite.
        let z = net.infer(&Tensor::zeros(&[1, 1])).unwrap();
        assert!(z.is_finite());
    }

    #[test]
    fn named_tensors_cover_params_and_buffers() {
        let mut rng = seed::rng(1);
        let net = Sequential::<f32>::init(
            vec![
                LayerKind::Linear { in_features: 2, out_features: 2, bias: true },
                LayerKind::BatchNorm2d { channels: 2, eps: 1e-5, momentum: 0.1 },
            ],
            &mut rng,
        );
        let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["0.weight", "0.bias", "1.weight", "1.bias", "1.running_mean", "1.running_var"]);
    }
}
