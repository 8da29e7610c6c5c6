use crate::autodiff::GradientMap;
use crate::layer::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for every scalar of a [`ModelParams`], flattened in
/// [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, num_scalars: usize) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; num_scalars],
            v: vec![0.0; num_scalars],
        }
    }

    /// One bias-corrected update. Gradients are keyed by tensor position;
    /// tensors missing from `grads` are treated as having zero gradient.
    pub fn update(&mut self, params: &mut ModelParams, grads: &GradientMap) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let mut off = 0;
        for (key, tensor) in params.tensors_mut().enumerate() {
            let g = grads.get(key);
            for (i, w) in tensor.iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
            off += tensor.len();
        }
    }
}
