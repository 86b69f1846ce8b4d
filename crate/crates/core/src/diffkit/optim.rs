use serde::{Deserialize, Serialize};

use super::{DiffError, Grads, Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = params.zeros_like().0;
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update: `θ ← θ − lr·(m̂ / (√v̂ + ε) + λ·θ)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<(), DiffError> {
        if grads.0.len() != params.len() || self.m.len() != params.len() {
            return Err(DiffError::Checkpoint(format!(
                "optimizer tracks {} arrays, store has {}, gradients {}",
                self.m.len(),
                params.len(),
                grads.0.len()
            )));
        }
        for id in params.ids() {
            let (p, g) = (params.get(id), grads.get(id));
            if p.shape() != g.shape() || p.shape() != self.m[id.0].shape() {
                return Err(DiffError::Shape {
                    name: params.name(id).to_string(),
                    expected: p.shape(),
                    found: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in params.ids() {
            let g = &grads.get(id).data;
            let m = &mut self.m[id.0].data;
            let v = &mut self.v[id.0].data;
            let p = &mut params.get_mut(id).data;
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                p[k] -= lr * (update + weight_decay * p[k]);
            }
        }
        if !params.all_finite() {
            return Err(DiffError::NonFinite {
                node: "parameters after update".into(),
            });
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
