//! Bias-corrected Adam with an exponential moving average of the weights.

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

/// Named trainable tensors, addressed by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.values[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.values.iter().map(Tensor::shape).collect()
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decay of the EMA shadow; 0 makes the shadow track the parameters exactly.
    pub ema_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ema_decay: 0.999,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    ema: Vec<Tensor>,
}

impl AdamState {
    /// Moments start at zero; the EMA shadow starts at the current parameters.
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.values.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            ema: params.values.clone(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn ema(&self) -> &[Tensor] {
        &self.ema
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One update with an explicit learning rate (warm-up schedules).
    pub fn step_with_lr(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f32) -> Result<()> {
        if grads.len() != params.len() {
            return Err(DiffError::InvalidArgument {
                op: "adam_step",
                msg: format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.values[i].shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: params.values[i].shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(DiffError::NonFiniteGradient(params.names[i].clone()));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            ema_decay,
            ..
        } = self.config;
        let (b1, b2) = (beta1 as f64, beta2 as f64);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let decay = ema_decay as f64;

        for i in 0..params.len() {
            let p = params.values[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let shadow = self.ema[i].data_mut();
            for j in 0..p.len() {
                let gj = grads[i].data()[j] as f64;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let updated = p[j] as f64 - lr as f64 * m_hat / (v_hat.sqrt() + eps as f64);
                p[j] = updated as f32;
                shadow[j] = (decay * shadow[j] as f64 + (1.0 - decay) * p[j] as f64) as f32;
            }
        }
        Ok(())
    }
}
