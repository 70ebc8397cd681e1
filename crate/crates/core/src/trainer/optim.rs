//! AdamW: bias-corrected adaptive moments with decoupled weight decay.

use crate::error::{Error, Result};
use crate::field::GradientBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates and the number of applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One AdamW update in place.
///
/// `theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`. A gradient
/// with any non-finite entry is rejected before anything is modified.
pub fn update_params(params: &mut [f64], grads: &GradientBuffer, state: &mut AdamState, hp: &AdamHyper) -> Result<()> {
    if params.len() != grads.values.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::arg(format!(
            "optimizer shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.values.len(),
            state.m.len()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    state.t += 1;
    let bias1 = 1.0 - hp.beta1.powf(state.t as f64);
    let bias2 = 1.0 - hp.beta2.powf(state.t as f64);
    let decay = 1.0 - hp.learning_rate * hp.weight_decay;
    for (((p, g), m), v) in params.iter_mut().zip(&grads.values).zip(&mut state.m).zip(&mut state.v) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p = *p * decay - hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
