use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in store.iter_mut() {
            let (r, c) = p.value.shape();
            let m = self.first.entry(name.to_string()).or_insert_with(|| Matrix::zeros(r, c));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Matrix::zeros(r, c));
            let grad = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * g;
                let mhat = *mk / bc1;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                let vhat = *vk / bc2;
                *w -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
