use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Skip every update (gradient and decay) of the embedding.
    pub freeze_embedding: bool,
}

impl AdamHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            freeze_embedding: false,
        }
    }
}

/// First and second moment buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Weight decay is decoupled and applies to weight matrices and the
/// embedding; biases are not decayed.
fn decays(name: &str) -> bool {
    !name.starts_with('b')
}

/// One AdamW update with bias-corrected moments:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`. `step_index` starts at 1.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    hyper: &AdamHyper,
    step_index: u64,
) -> Result<()> {
    if step_index == 0 {
        return Err(Error::domain("adamw step_index must be >= 1"));
    }
    for (name, g) in grads.tensors() {
        if hyper.freeze_embedding && name == "embedding" {
            continue;
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient in tensor `{name}` at index {i}")));
        }
    }
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
        freeze_embedding,
    } = *hyper;
    let t = step_index as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((name, theta), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        if freeze_embedding && name == "embedding" {
            continue;
        }
        let shrink = if decays(name) { 1.0 - lr * weight_decay } else { 1.0 };
        for i in 0..theta.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] = theta[i] * shrink - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
