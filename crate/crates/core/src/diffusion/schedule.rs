use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear noise schedule `beta_t = beta0 + t (beta1 - beta0)` on `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta0: 0.05,
            beta1: 20.0,
        }
    }
}

/// Closed-form forward-marginal coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    /// Weight of the clean sample, `exp(-int_beta / 2)`.
    pub alpha: f64,
    /// `1 - exp(-int_beta)`.
    pub variance: f64,
}

impl Marginal {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Mean of `X_t` given the clean value and prior value.
    pub fn mean(&self, x0: f64, z: f64) -> f64 {
        self.alpha * x0 + (1.0 - self.alpha) * z
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn new(beta0: f64, beta1: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta1 > beta0 && beta1.is_finite()) {
            return Err(Error::Domain(format!(
                "schedule needs beta1 > beta0 > 0, got ({beta0}, {beta1})"
            )));
        }
        Ok(Self { beta0, beta1 })
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta0 + t * (self.beta1 - self.beta0)
    }

    /// `integral_0^t beta_s ds`.
    pub fn int_beta(&self, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t)
    }

    pub fn marginal(&self, t: f64) -> Result<Marginal> {
        let ib = self.int_beta(t)?;
        Ok(Marginal {
            alpha: (-0.5 * ib).exp(),
            variance: -(-ib).exp_m1(),
        })
    }

    /// Score-matching weight `lambda_t = 1 - exp(-int_beta)`.
    pub fn loss_weight(&self, t: f64) -> Result<f64> {
        Ok(self.marginal(t)?.variance)
    }
}

pub fn int_beta(sched: &NoiseSchedule, t: f64) -> Result<f64> {
    sched.int_beta(t)
}

/// `(alpha, variance)` of the forward marginal at `t`.
pub fn marginal_params(sched: &NoiseSchedule, t: f64) -> Result<(f64, f64)> {
    let m = sched.marginal(t)?;
    Ok((m.alpha, m.variance))
}

pub fn loss_weight(sched: &NoiseSchedule, t: f64) -> Result<f64> {
    sched.loss_weight(t)
}
