use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamStore};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied by [`Adam::decay_lr`], typically once per episode.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: 0.99 }
    }
}

/// Adam with bias correction. Moments and step counts are kept per
/// parameter, so optimizers that only ever see a subset of a store (the
/// actor vs. the critics) stay independent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    lr: f64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let n = store.len();
        Self { lr: config.lr, config, m: vec![None; n], v: vec![None; n], t: vec![0; n] }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decay_lr(&mut self) {
        self.lr *= self.config.decay;
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// alone. Any non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        for (id, g) in grads.iter() {
            let i = id.0;
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros_like(g));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros_like(g));
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let (mh, vh) = (m.data()[k] / c1, v.data()[k] / c2);
                p[k] -= self.lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
