use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMap, ParamStore, Tensor};
use crate::error::{FpbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FpbError::config("lr", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FpbError::config(name, format!("{b} not in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(FpbError::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having a zero gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradMap,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(FpbError::dim(
            "adam_step",
            format!(
                "{} moment buffers for {} parameters",
                state.m.len(),
                params.len()
            ),
        ));
    }
    for (id, g) in grads {
        if g.shape() != params.value(*id).shape() {
            return Err(FpbError::dim(
                "adam_step",
                format!(
                    "gradient {:?} for {} {:?}",
                    g.shape(),
                    params.name(*id),
                    params.value(*id).shape()
                ),
            ));
        }
        if g.data().iter().any(|x| x.is_nan()) {
            return Err(FpbError::Training(format!(
                "NaN gradient for {}",
                params.name(*id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        let i = id.index();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = params.value_mut(*id).data_mut();
        for (((w, m), v), &g) in w
            .iter_mut()
            .zip(m.iter_mut())
            .zip(v.iter_mut())
            .zip(g.data())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &GradMap) -> f64 {
    grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when the global norm `g` exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(FpbError::config("clip_norm", "must be positive"));
    }
    let g = global_norm(grads);
    if g > max_norm {
        let s = max_norm / g;
        for (_, t) in grads.iter_mut() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }
    Ok(g)
}
