//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptState {
    pub fn new(p: &ModelParams) -> Self {
        OptState {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }
}

/// One update of every parameter:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + wd·p)`.
pub fn adam_step(p: &mut ModelParams, g: &ModelParams, opt: &mut OptState, cfg: &AdamConfig) {
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let tensors = p
        .tensors_mut()
        .into_iter()
        .zip(g.tensors())
        .zip(opt.m.tensors_mut())
        .zip(opt.v.tensors_mut());
    for (((pt, gt), mt), vt) in tensors {
        let ps = pt.as_mut_slice();
        let ms = mt.as_mut_slice();
        let vs = vt.as_mut_slice();
        for (k, &gk) in gt.as_slice().iter().enumerate() {
            ms[k] = cfg.beta1 * ms[k] + (1.0 - cfg.beta1) * gk;
            vs[k] = cfg.beta2 * vs[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = ms[k] / bc1;
            let vhat = vs[k] / bc2;
            ps[k] -= cfg.learning_rate * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * ps[k]);
        }
    }
}
