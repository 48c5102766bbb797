//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserModel, GradientBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

impl AdamW {
    /// Applies one update to `params` in place.
    pub fn update(
        &self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        state: &mut AdamState,
    ) -> Result<()> {
        if params.len() != grads.len() || state.m.len() != params.len() {
            return Err(Error::Argument(format!(
                "optimizer sizes disagree: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} at parameter {i} (step {})",
                grads[i],
                state.step + 1
            )));
        }
        state.step += 1;
        let bc1 = 1.0 - self.beta1.powi(state.step as i32);
        let bc2 = 1.0 - self.beta2.powi(state.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut state.m)
            .zip(&mut state.v)
        {
            *p -= lr * self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One optimizer step on the model's parameters.
pub fn sgd_step(
    model: &mut DenoiserModel,
    bundle: &GradientBundle,
    lr: f64,
    opt: &AdamW,
    state: &mut AdamState,
) -> Result<()> {
    opt.update(model.params_mut(), &bundle.grads, lr, state)
}
