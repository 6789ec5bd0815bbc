//! Adam with bias-corrected first and second moments.

use super::ModelParams;

#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Deterministic: a fixed tensor order and no
/// data-dependent branching.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let gs = grads.tensors();
    for (ti, (_, mut p)) in params.tensors_mut().into_iter().enumerate() {
        let g = gs[ti].1.as_slice();
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for (j, x) in p.as_slice_mut().iter_mut().enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}
