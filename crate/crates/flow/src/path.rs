//! Conditional optimal-transport probability path.

use crate::error::{invalid, Result};

/// `X_t = t X_1 + (1 - ρt) X_0` with `ρ = 1 - σ`, so `X_1` is reached up to a
/// Gaussian of standard deviation `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CondOtPath {
    pub sigma: f64,
}

impl Default for CondOtPath {
    fn default() -> Self {
        Self { sigma: 1e-5 }
    }
}

impl CondOtPath {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(invalid(format!("sigma must lie in (0, 1), got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn rho(&self) -> f64 {
        1.0 - self.sigma
    }

    /// Coefficient of `X_0`, written as `(1 - t) + σt` so both endpoints are exact.
    pub fn noise_coef(&self, t: f64) -> f64 {
        (1.0 - t) + self.sigma * t
    }

    /// The point on the path at time `t` and its (time-independent) velocity
    /// `X_1 - ρ X_0`.
    pub fn sample(&self, x0: &[f32], x1: &[f32], t: f64) -> Result<(Vec<f32>, Vec<f32>)> {
        if x0.len() != x1.len() {
            return Err(invalid(format!("path endpoints differ in size: {} vs {}", x0.len(), x1.len())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("t must lie in [0, 1], got {t}")));
        }
        let a = self.noise_coef(t);
        let rho = self.rho();
        let xt = x0.iter().zip(x1).map(|(&a0, &a1)| (t * a1 as f64 + a * a0 as f64) as f32).collect();
        let target = x0.iter().zip(x1).map(|(&a0, &a1)| (a1 as f64 - rho * a0 as f64) as f32).collect();
        Ok((xt, target))
    }
}
