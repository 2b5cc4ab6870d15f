//! Adam with per-entry lazy updates.
//!
//! Entries whose gradient is exactly zero are skipped: their moments do not
//! decay and the parameter is left untouched. Each entry keeps its own step
//! count for bias correction, so an entry behaves like plain Adam over the
//! steps in which it received a gradient.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        let AdamConfig { beta1, beta2, eps } = self.config;
        for i in 0..params.len() {
            let g = grads[i];
            if g == 0.0 {
                continue;
            }
            self.steps[i] += 1;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let k = self.steps[i] as i32;
            let m_hat = self.m[i] / (1.0 - beta1.powi(k));
            let v_hat = self.v[i] / (1.0 - beta2.powi(k));
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
