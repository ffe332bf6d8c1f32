//! Named parameter storage and the adaptive-moment optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{DiffError, Result};

/// Adaptive-moment hyperparameters with the customary defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// All trainable tensors by unique name, plus per-parameter optimizer
/// moments and the global step count.
///
/// Iteration order is the name order (BTreeMap), so every sweep over
/// parameters is deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(DiffError::DuplicateParameter(name.to_string()));
        }
        self.moments.insert(
            name.to_string(),
            Moments { m: Tensor::zeros(value.shape().to_vec()), v: Tensor::zeros(value.shape().to_vec()) },
        );
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Optimizer moments of a parameter, `(first, second)`.
    pub fn moments_of(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        self.moments
            .get(name)
            .map(|m| (&m.m, &m.v))
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    /// Restore optimizer moments, typically from a checkpoint.
    pub fn restore_moments(&mut self, name: &str, m: Tensor, v: Tensor) -> Result<()> {
        let value = self.params.get(name).ok_or_else(|| DiffError::UnknownParameter(name.to_string()))?;
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(DiffError::ShapeMismatch {
                primitive: "restore_moments",
                detail: format!("moments for '{name}' do not match parameter shape"),
            });
        }
        self.moments.insert(name.to_string(), Moments { m, v });
        Ok(())
    }

    /// One bias-corrected adaptive-moment update over all parameters.
    /// Parameters without an entry in `grads` receive a zero gradient (their
    /// moments still decay). Non-finite gradients abort, naming the
    /// parameter.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, config: &AdamConfig) -> Result<()> {
        for name in grads.keys() {
            if !self.params.contains_key(name) {
                return Err(DiffError::UnknownParameter(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for (name, value) in self.params.iter_mut() {
            let zero;
            let grad = match grads.get(name) {
                Some(g) => {
                    if g.shape() != value.shape() {
                        return Err(DiffError::ShapeMismatch {
                            primitive: "adam_step",
                            detail: format!(
                                "gradient {:?} vs parameter '{}' {:?}",
                                g.shape(),
                                name,
                                value.shape()
                            ),
                        });
                    }
                    if !g.all_finite() {
                        return Err(DiffError::NonFiniteGradient(name.clone()));
                    }
                    g
                }
                None => {
                    zero = Tensor::zeros(value.shape().to_vec());
                    &zero
                }
            };
            let mom = self.moments.get_mut(name).expect("moments track params");
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            let p = value.data_mut();
            for i in 0..p.len() {
                let g = grad.data()[i];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}
