use serde::{Deserialize, Serialize};

use super::layers::{Grads, Sequential};
use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter layout of
/// the network they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<Tensor<T>>>,
    pub v: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, net: &Sequential<T>) -> Self {
        let zeros = net.zero_grads().layers;
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, net: &mut Sequential<T>, grads: &Grads<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let (b1, b2, eps, lr_t) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps), T::of(lr_t));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (pi, param) in layer.params.iter_mut().enumerate() {
                let g = &grads.layers[li][pi].data;
                let m = &mut self.m[li][pi].data;
                let v = &mut self.v[li][pi].data;
                for e in 0..param.data.len() {
                    m[e] = b1 * m[e] + one_b1 * g[e];
                    v[e] = b2 * v[e] + one_b2 * g[e] * g[e];
                    param.data[e] -= lr_t * m[e] / (v[e].sqrt() + eps);
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Adam<U> {
        let cast = |x: &Vec<Vec<Tensor<T>>>| x.iter().map(|l| l.iter().map(Tensor::cast).collect()).collect();
        Adam { config: self.config, step: self.step, m: cast(&self.m), v: cast(&self.v) }
    }
}
