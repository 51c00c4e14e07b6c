//! Adam with a cosine learning-rate decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Updates applied so far.
    pub step: usize,
    pub total_steps: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Cosine decay from `base` at step 0 to `final_lr` at `total`.
pub fn cosine_lr(base: f64, final_lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 || step >= total {
        return final_lr;
    }
    let progress = step as f64 / total as f64;
    final_lr + 0.5 * (base - final_lr) * (1.0 + (PI * progress).cos())
}

impl AdamState {
    pub fn new(num_params: usize, base_lr: f64, final_lr: f64, total_steps: usize) -> Self {
        Self {
            step: 0,
            total_steps,
            base_lr,
            final_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.base_lr, self.final_lr, self.step, self.total_steps)
    }

    /// One bias-corrected Adam update at the scheduled learning rate.
    ///
    /// Fails without touching `params` or the state when a gradient is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        if self.step >= self.total_steps {
            return Err(Error::InvalidParameter(format!(
                "optimizer already ran all {} steps",
                self.total_steps
            )));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let lr = self.lr();
        self.step += 1;
        let k = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(k);
        let c2 = 1.0 - self.beta2.powi(k);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
