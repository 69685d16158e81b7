use serde::{Deserialize, Serialize};

use crate::param::ParamVector;

/// SGD momentum buffer: `m ← μ m + g`, `θ ← θ - lr m`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub buffer: Vec<f64>,
}

pub fn sgd_update(
    params: &ParamVector,
    grad: &[f64],
    lr: f64,
    momentum: f64,
    state: &mut MomentumState,
) -> ParamVector {
    if state.buffer.len() != grad.len() {
        state.buffer = vec![0.0; grad.len()];
    }
    for (m, g) in state.buffer.iter_mut().zip(grad) {
        *m = momentum * *m + g;
    }
    let values = params
        .as_slice()
        .iter()
        .zip(&state.buffer)
        .map(|(p, m)| p - lr * m)
        .collect();
    params.with_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed steps.
    pub t: u64,
}

/// One bias-corrected Adam step.
pub fn adam_update(
    params: &ParamVector,
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> ParamVector {
    if state.m.len() != grad.len() {
        state.m = vec![0.0; grad.len()];
        state.v = vec![0.0; grad.len()];
        state.t = 0;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut values = params.as_slice().to_vec();
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        values[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.epsilon);
    }
    params.with_values(values)
}
