//! Adam optimizer over the flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::nncore::{Gradients, RnnParameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer state: first and second moment estimates in flat parameter
/// order, plus the update count for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    steps: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        AdamState { config, steps: 0, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params] }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update in place. `grads` must have the same shape as `params`.
    pub fn apply(&mut self, params: &mut RnnParameters<T>, grads: &Gradients<T>) {
        let flat = grads.to_flat();
        assert_eq!(flat.len(), self.m.len(), "gradient shape does not match optimizer state");
        self.steps += 1;
        let c = &self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let bc1 = T::of(1.0 - c.beta1.powi(self.steps as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.steps as i32));
        let one = T::one();

        let mut idx = 0;
        params.for_each_value_mut(|p| {
            let g = flat[idx];
            let m = b1 * self.m[idx] + (one - b1) * g;
            let v = b2 * self.v[idx] + (one - b2) * g * g;
            self.m[idx] = m;
            self.v[idx] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            idx += 1;
        });
        assert_eq!(idx, flat.len());
    }
}
