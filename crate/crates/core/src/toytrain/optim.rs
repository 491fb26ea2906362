//! Cosine learning-rate decay and AdamW.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;

/// Half-period cosine from `base` at step 0 to zero at `total_steps - 1`.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return base;
    }
    let progress = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by tensor
/// name and created lazily.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    steps: BTreeMap<String, u64>,
    moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            steps: BTreeMap::new(),
            moments: BTreeMap::new(),
        }
    }

    /// Updates `params` in place from the structurally identical `grads`.
    pub fn step(&mut self, params: &mut dyn ParamSet, grads: &dyn ParamSet, prefix: &str, lr: f64) {
        let mut flat_grads = Vec::new();
        grads.visit(prefix, &mut |name, _, g| flat_grads.push((name.to_string(), g.to_vec())));
        let mut grads_iter = flat_grads.into_iter();
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.steps.entry(prefix.to_string()).or_insert(0);
        *t += 1;
        let bc1 = 1.0 - beta1.powi(*t as i32);
        let bc2 = 1.0 - beta2.powi(*t as i32);
        params.visit_mut(prefix, &mut |name, p| {
            let (gname, g) = grads_iter.next().expect("gradient set matches parameter set");
            debug_assert_eq!(gname, name);
            let st = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.len() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[i]);
            }
        });
    }
}
