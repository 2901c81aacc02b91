use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Moments sized for `params`, with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &[&Tensor<T>], learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Param(format!("learning rate {learning_rate}")));
        }
        Ok(Self {
            first: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One in-place update; consumes (clears) every parameter gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::MissingGradient(i));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() {
                return Err(Error::ShapeMismatch(format!("parameter {i} changed size")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.take_grad().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
