//! Adam with a linear learning-rate schedule (optional warmup, decay to 0).

use super::Params;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the rate decays linearly to zero.
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl AdamConfig {
    pub fn new(lr: f64, total_steps: u64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps,
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &impl Params) -> Self {
        let shapes: Vec<Array2<f64>> = model
            .params()
            .iter()
            .map(|p| Array2::zeros(p.raw_dim()))
            .collect();
        Adam {
            cfg,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// Learning rate for 0-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        let cfg = &self.cfg;
        if cfg.warmup_steps > 0 && t < cfg.warmup_steps {
            return cfg.lr * (t + 1) as f64 / cfg.warmup_steps as f64;
        }
        if cfg.total_steps <= cfg.warmup_steps {
            return cfg.lr;
        }
        let remaining = cfg.total_steps.saturating_sub(t) as f64;
        cfg.lr * (remaining / (cfg.total_steps - cfg.warmup_steps) as f64).max(0.0)
    }

    /// Apply one update from the model's accumulated gradients.
    pub fn apply(&mut self, model: &mut impl Params) {
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        let grads: Vec<Array2<f64>> = model.grads().iter().map(|g| (*g).clone()).collect();
        let mut params = model.params_mut();
        assert_eq!(params.len(), self.m.len(), "optimizer built for another model");
        for i in 0..params.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |mv, gv| {
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * gv
            });
            v.zip_mut_with(g, |vv, gv| {
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * gv * gv
            });
            let p = &mut params[i];
            for ((pv, mv), vv) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
    }
}
