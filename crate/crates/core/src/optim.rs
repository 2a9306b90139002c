//! Adam with a step-decayed learning rate.

use crate::config::EngineConfig;
use crate::params::Trainable;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Learning rate after `step` completed steps:
/// `lr · factor^(step / decay_every)` (integer division).
pub fn learning_rate_at(cfg: &EngineConfig, step: u64) -> f64 {
    let decays = (step / cfg.lr_decay_every_steps) as i32;
    cfg.learning_rate * cfg.lr_decay_factor.powi(decays)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Trainable,
    second: Trainable,
    /// Completed update steps.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Trainable) -> Self {
        Self {
            first: Trainable::zeros_like(params),
            second: Trainable::zeros_like(params),
            step: 0,
        }
    }

    /// Applies one bias-corrected Adam update with learning rate `lr`.
    pub fn update(&mut self, params: &mut Trainable, grad: &Trainable, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let grads = grad.tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(firsts)
            .zip(seconds)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                if lr == 0.0 {
                    continue;
                }
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + EPS);
            }
        }
    }
}
