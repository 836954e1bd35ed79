//! Adam with global-norm gradient clipping over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clip applied before the update; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Update applied; carries the gradient norm before clipping.
    Applied { grad_norm: f64 },
    /// Gradient contained a non-finite entry; parameters left untouched.
    Skipped,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale `grads` in place so its L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One bias-corrected Adam update. `grads` is consumed as scratch (it is clipped in place).
pub fn adam_step(params: &mut [f64], grads: &mut [f64], opt: &mut AdamState) -> StepOutcome {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), opt.m.len(), "optimizer state length mismatch");
    if grads.iter().any(|g| !g.is_finite()) {
        log::warn!(
            "non-finite gradient at optimizer step {}; update skipped",
            opt.step + 1
        );
        return StepOutcome::Skipped;
    }
    let c = opt.config;
    let grad_norm = match c.grad_clip_norm {
        Some(max) => clip_global_norm(grads, max),
        None => l2_norm(grads),
    };
    opt.step += 1;
    let bc1 = 1.0 - c.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - c.beta2.powi(opt.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        opt.m[i] = c.beta1 * opt.m[i] + (1.0 - c.beta1) * g;
        opt.v[i] = c.beta2 * opt.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    StepOutcome::Applied { grad_norm }
}
