use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelError;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: ModelParams<T>,
    pub second_moment: ModelParams<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            config,
        }
    }
}

/// Bias-corrected Adam update of one parameter slice at step `t` (1-based).
pub fn adam_update_slice<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    config: &AdamConfig,
    lr: f64,
) {
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - libm::pow(config.beta1, t as f64));
    let c2 = T::from_f64_lossy(1.0 - libm::pow(config.beta2, t as f64));
    let eps = T::from_f64_lossy(config.epsilon);
    let lr = T::from_f64_lossy(lr);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step over every parameter block. Gradients are checked for
/// finiteness first; on failure nothing is modified.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), ModelError> {
    if params.dims != grads.dims || params.dims != state.first_moment.dims {
        return Err(ModelError::Shape(
            "parameter, gradient and optimizer structures differ",
        ));
    }
    for (name, g) in grads.blocks() {
        if !g.all_finite() {
            return Err(ModelError::NonFiniteGradient(name));
        }
    }
    state.step_count += 1;
    let t = state.step_count;
    let config = state.config;
    let grad_blocks = grads.blocks();
    let m_blocks = state.first_moment.blocks_mut();
    let v_blocks = state.second_moment.blocks_mut();
    for (((p, g), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grad_blocks)
        .zip(m_blocks)
        .zip(v_blocks)
    {
        adam_update_slice(
            p.1.data_mut(),
            g.1.data(),
            m.1.data_mut(),
            v.1.data_mut(),
            t,
            &config,
            lr,
        );
    }
    Ok(())
}
