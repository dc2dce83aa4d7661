use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "adam betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("adam eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter in visit order.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[(String, &Param<T>)]) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(&p.shape())).collect();
        AdamState {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update from the gradients currently held by
/// `params`. Parameters without a gradient are left alone. Every gradient
/// is checked before any weight changes.
pub fn adam_step<T: Scalar>(
    params: &[(String, &Param<T>)],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::arg(format!(
            "optimizer holds {} moment buffers for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    let mut grads = Vec::with_capacity(params.len());
    for ((name, p), m) in params.iter().zip(&state.m) {
        let g = p.grad();
        if let Some(g) = &g {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam_step", g.shape(), m.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        grads.push(g);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let mut w = p.value();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, wj) in w.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j].as_f64();
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let step = lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            *wj = T::of(wj.as_f64() - step);
        }
        p.set(w);
    }
    Ok(())
}
