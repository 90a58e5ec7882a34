//! Adam with bias correction.
//!
//! Weight decay is applied outside the update, directly to the weights (see
//! [`crate::stabilizers::apply_weight_decay`]); the training loop calls it
//! right before [`adam_step`] so the pair behaves as AdamW.

use crate::error::{Error, Result};
use crate::tensors::Tensors;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new<P: Tensors + ?Sized>(params: &P, lr: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            lr,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P, G>(params: &mut P, grads: &G, state: &mut AdamState) -> Result<()>
where
    P: Tensors + ?Sized,
    G: Tensors + ?Sized,
{
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || params
            .iter()
            .zip(&grads)
            .zip(&state.m)
            .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::shape(
            "adam_step",
            "parameter, gradient and moment buffers disagree",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
