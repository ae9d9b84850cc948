//! Independent reference computations for cross-checking the diffusion code.
//!
//! Nothing here calls into [`crate::diffusion`] apart from reading the two
//! schedule coefficients, so a mistake on either side shows up as a
//! disagreement.

use std::f64::consts::PI;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// Integral of the noise rate over `[0, t]` by composite Simpson quadrature,
/// which is exact for the linear rate.
fn integrated_rate(sched: &NoiseSchedule, t: f64) -> f64 {
    let rate = |s: f64| sched.beta0 + (sched.beta1 - sched.beta0) * s;
    let n = 8;
    let h = t / n as f64;
    let mut acc = rate(0.0) + rate(t);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * rate(i as f64 * h);
    }
    acc * h / 3.0
}

/// `(mean coefficient of x0, variance)` of the forward transition.
fn transition(sched: &NoiseSchedule, t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    let rho = integrated_rate(sched, t);
    Ok(((-rho / 2.0).exp(), 1.0 - (-rho).exp()))
}

/// Log-density of the forward transition `p(x_t | x0)` for independent
/// coordinates sharing one prior value per coordinate.
pub fn forward_log_density(x_t: &[f64], x0: &[f64], z: &[f64], sched: &NoiseSchedule, t: f64) -> Result<f64> {
    if x_t.len() != x0.len() || x0.len() != z.len() {
        return Err(Error::Shape("forward density inputs differ in length".into()));
    }
    let (a, var) = transition(sched, t)?;
    if var <= 0.0 {
        return Err(Error::SingularTime(t));
    }
    Ok(x_t
        .iter()
        .zip(x0)
        .zip(z)
        .map(|((&x, &x0), &z)| {
            let mu = a * x0 + (1.0 - a) * z;
            -0.5 * (2.0 * PI * var).ln() - (x - mu).powi(2) / (2.0 * var)
        })
        .sum())
}

/// Gaussian data law `N(mu0, sigma0^2)` pushed through the forward SDE with
/// prior value `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub mu0: f64,
    pub sigma0: f64,
    pub z: f64,
}

impl GaussianToy {
    pub fn new(mu0: f64, sigma0: f64, z: f64) -> Result<Self> {
        if !(sigma0 >= 0.0) {
            return Err(Error::Domain(format!("sigma0 = {sigma0} must be >= 0")));
        }
        Ok(Self { mu0, sigma0, z })
    }

    /// Mean and variance of the marginal at time `t`.
    pub fn marginal(&self, sched: &NoiseSchedule, t: f64) -> Result<(f64, f64)> {
        let (a, var) = transition(sched, t)?;
        Ok((
            a * self.mu0 + (1.0 - a) * self.z,
            a * a * self.sigma0 * self.sigma0 + var,
        ))
    }
}

/// Score of the marginal density of a [`GaussianToy`].
pub fn gaussian_marginal_score(toy: &GaussianToy, x_t: f64, sched: &NoiseSchedule, t: f64) -> Result<f64> {
    let (mean, var) = toy.marginal(sched, t)?;
    if var <= 0.0 {
        return Err(Error::SingularTime(t));
    }
    Ok(-(x_t - mean) / var)
}

/// Central-difference gradient estimate.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite function value around coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `std / sqrt(n)`.
    pub se_mean: f64,
    /// `std / sqrt(2 n)`, the normal-theory error of the std estimate.
    pub se_std: f64,
}

/// Sample mean and standard deviation of `sampler(0..n)`; each call gets its
/// own index to seed from.
pub fn mc_moments<F>(mut sampler: F, n: usize) -> Result<Moments>
where
    F: FnMut(u64) -> f64,
{
    if n < 100 {
        return Err(Error::InvalidInput(format!("need n >= 100 draws, got {n}")));
    }
    let xs: Vec<f64> = (0..n as u64).map(&mut sampler).collect();
    Ok(moments_of(&xs))
}

/// Moments of a finished sample, using a two-pass variance.
pub fn moments_of(xs: &[f64]) -> Moments {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Moments {
        n,
        mean,
        std,
        se_mean: std / (n as f64).sqrt(),
        se_std: std / (2.0 * n as f64).sqrt(),
    }
}
