use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. `lrs[i]` is the rate of tensor `i` in
/// `layout`; tensors with `None` are skipped entirely (moments untouched).
pub fn adam_step(
    params: &mut [f32],
    grads: &[f64],
    state: &mut AdamState,
    layout: &Layout,
    lrs: &[Option<f64>],
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (info, lr) in layout.tensors.iter().zip(lrs) {
        let Some(lr) = *lr else { continue };
        for i in info.range() {
            let g = grads[i];
            let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            let next = params[i] as f64 - lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            if !next.is_finite() {
                return Err(Error::NonFiniteTensor(info.name.clone()));
            }
            state.m[i] = m;
            state.v[i] = v;
            params[i] = next as f32;
        }
    }
    Ok(())
}
