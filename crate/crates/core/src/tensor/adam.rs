use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. Parameters absent from `grads` see a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        if !(self.config.lr > 0.0) {
            return Err(Error::invalid("adam_step", "learning rate must be positive"));
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::invalid("adam_step", "optimizer state does not match parameter store"));
        }
        let mut dense: Vec<Option<&Tensor>> = alloc::vec![None; params.len()];
        for (id, g) in grads {
            if g.shape() != params.get(*id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: params.get(*id).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(alloc::format!("gradient of {}", params.name(*id))));
            }
            dense[id.0] = Some(g);
        }

        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as f64;
        let bc1 = 1.0 - math::powf(beta1, t);
        let bc2 = 1.0 - math::powf(beta2, t);
        for i in 0..params.len() {
            let p = params.get_mut(ParamId(i)).data_mut();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = dense[i].map(Tensor::data);
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
