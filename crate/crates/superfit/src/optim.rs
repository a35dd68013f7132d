//! Adam with bias correction, operating over a model's named parameter
//! tensors in their fixed iteration order. Moment vectors are stored flat so
//! they can be checkpointed verbatim.

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, flattened over the concatenation of
/// all trainable parameters, plus the step counter `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element> {
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Element> AdamState<T> {
    pub fn new(param_count: usize) -> Self {
        Self {
            t: 0,
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
        }
    }

    /// One update over all parameters. `grads` must align one-to-one with
    /// `params`, which must match the state's flat length.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &[Tensor<T>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
        if total != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state holds {} elements, model has {total}",
                self.m.len()
            )));
        }
        self.t += 1;
        let lr = T::from_f64(cfg.learning_rate);
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let eps = T::from_f64(cfg.epsilon);
        let one = T::one();
        let bc1 = one - T::from_f64(cfg.beta1.powi(self.t as i32));
        let bc2 = one - T::from_f64(cfg.beta2.powi(self.t as i32));

        let mut offset = 0;
        for ((name, param), grad) in params.iter_mut().zip(grads) {
            if grad.shape() != param.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: gradient shaped {:?} for parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                let mi = &mut self.m[offset + i];
                let vi = &mut self.v[offset + i];
                *mi = b1 * *mi + (one - b1) * g[i];
                *vi = b2 * *vi + (one - b2) * g[i] * g[i];
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += p.len();
        }
        Ok(())
    }
}
