use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{normal_vec, DiffusionPrior};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// How the noise rate is turned into a per-step coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRate {
    /// `integral of beta over [t - h, t]`. Exact for the linear schedule and
    /// accurate at 6 to 30 steps.
    #[default]
    Integrated,
    /// `beta_t * h`, the plain left-point rule. Needs around 100 steps before
    /// the final sample spread is right.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub temperature: f64,
    pub seed: u64,
    pub step_rate: StepRate,
    /// Mutation hook for verification: integrate the drift with the wrong
    /// sign. Never set outside tests.
    #[serde(skip)]
    #[doc(hidden)]
    pub flip_drift_sign: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 30,
            temperature: 1.0,
            seed: 0,
            step_rate: StepRate::Integrated,
            flip_drift_sign: false,
        }
    }
}

impl SamplerConfig {
    pub fn new(n_steps: usize, seed: u64) -> Self {
        Self {
            n_steps,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Domain("sampler needs n_steps >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub x: Vec<f64>,
    /// State norm before the first update and after every step.
    pub trajectory: Vec<TrajectoryPoint>,
}

impl SampleOutput {
    pub fn write_trajectory_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record(["step", "t", "norm"])
            .map_err(|e| Error::format(path, e.to_string()))?;
        for p in &self.trajectory {
            w.write_record([p.step.to_string(), p.t.to_string(), p.norm.to_string()])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euler-Maruyama integration of the reverse-time SDE from `t = 1` down to
/// `t = 0`. The score function receives `(x, z, t)`.
///
/// With `h = 1 / n` and `t = k h` for `k = n..1`, each step applies
/// `X += b (0.5 (X - z) + score) + sqrt(b) eps`, the reverse of the forward
/// drift `0.5 beta_t (z - X)`, where `b` is the step rate chosen by
/// [`StepRate`]. Noise is omitted on the last step.
pub fn reverse_sample<F>(
    mut score_fn: F,
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<SampleOutput>
where
    F: FnMut(&[f64], &[f64], f64) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = &prior.z;
    let sd1 = sched.marginal(1.0)?.std() * cfg.temperature;
    let mut x: Vec<f64> = z
        .iter()
        .zip(normal_vec(&mut rng, z.len()))
        .map(|(&zv, e)| zv + sd1 * e)
        .collect();
    let n = cfg.n_steps;
    let h = 1.0 / n as f64;
    let mut trajectory = Vec::with_capacity(n + 1);
    trajectory.push(TrajectoryPoint { step: 0, t: 1.0, norm: l2(&x) });
    for (step, k) in (1..=n).rev().enumerate() {
        let t = k as f64 * h;
        let bh = match cfg.step_rate {
            StepRate::Integrated => sched.int_beta(t)? - sched.int_beta((t - h).max(0.0))?,
            StepRate::Endpoint => sched.beta(t) * h,
        };
        let score = score_fn(&x, z, t)?;
        prior.check_len(score.len(), "score")?;
        let last = k == 1;
        let eps = if last { vec![0.0; x.len()] } else { normal_vec(&mut rng, x.len()) };
        let noise = bh.sqrt();
        for ((xv, (&zv, &s)), e) in x.iter_mut().zip(z.iter().zip(&score)).zip(eps) {
            let drift = if cfg.flip_drift_sign {
                0.5 * (zv - *xv) - s
            } else {
                0.5 * (*xv - zv) + s
            };
            *xv += bh * drift + noise * e;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: step + 1 });
        }
        trajectory.push(TrajectoryPoint {
            step: step + 1,
            t: t - h,
            norm: l2(&x),
        });
    }
    Ok(SampleOutput { x, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::analytic_conditional_score;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn point_mass_recovered_with_conditional_score() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let mut err = 0.0;
        for seed in 0..1000 {
            let score = |x: &[f64], _: &[f64], t: f64| analytic_conditional_score(x, &[3.0], &p, &s, t);
            let out = reverse_sample(score, &p, &s, &SamplerConfig::new(100, seed)).unwrap();
            err += (out.x[0] - 3.0).abs();
        }
        assert!(err / 1000.0 < 0.1, "{}", err / 1000.0);
    }

    #[test]
    fn gaussian_data_recovered() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        // Data N(0, 1) with z = 0 keeps the marginal at N(0, 1) for every t.
        let score = |x: &[f64], _: &[f64], _: f64| Ok(x.iter().map(|v| -v).collect());
        let xs: Vec<f64> = (0..4000)
            .map(|seed| reverse_sample(score, &p, &s, &SamplerConfig::new(100, seed)).unwrap().x[0])
            .collect();
        let (m, sd) = moments(&xs);
        assert!(m.abs() < 0.06 && (sd - 1.0).abs() < 0.06, "{m} {sd}");
    }

    #[test]
    fn endpoint_rule_recovers_gaussian_at_100_steps() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let score = |x: &[f64], _: &[f64], _: f64| Ok(x.iter().map(|v| -v).collect());
        let cfg = SamplerConfig {
            step_rate: StepRate::Endpoint,
            ..SamplerConfig::new(100, 0)
        };
        let xs: Vec<f64> = (0..4000)
            .map(|seed| reverse_sample(score, &p, &s, &SamplerConfig { seed, ..cfg }).unwrap().x[0])
            .collect();
        let (m, sd) = moments(&xs);
        assert!(m.abs() < 0.06 && (sd - 1.0).abs() < 0.06, "{m} {sd}");
    }

    #[test]
    fn integrated_rule_collapses_point_mass_in_few_steps() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        for n in [6, 30] {
            let xs: Vec<f64> = (0..300)
                .map(|seed| {
                    let score = |x: &[f64], _: &[f64], t: f64| analytic_conditional_score(x, &[3.0], &p, &s, t);
                    reverse_sample(score, &p, &s, &SamplerConfig::new(n, seed)).unwrap().x[0]
                })
                .collect();
            let (m, sd) = moments(&xs);
            assert!((m - 3.0).abs() < 0.05 && sd < 0.05, "{n}: {m} {sd}");
        }
    }

    #[test]
    fn flipped_drift_fails_badly() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let score = |x: &[f64], _: &[f64], _: f64| Ok(x.iter().map(|v| -v).collect());
        let cfg = SamplerConfig {
            flip_drift_sign: true,
            ..SamplerConfig::new(100, 1)
        };
        let xs: Vec<f64> = (0..500)
            .map(|seed| reverse_sample(score, &p, &s, &SamplerConfig { seed, ..cfg }).unwrap().x[0])
            .collect();
        let (_, sd) = moments(&xs);
        assert!((sd - 1.0).abs() > 0.5, "{sd}");
    }

    #[test]
    fn deterministic_and_trajectory_length() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::new(vec![0.5; 4], vec![4]).unwrap();
        let zero = |x: &[f64], _: &[f64], _: f64| Ok(vec![0.0; x.len()]);
        let a = reverse_sample(zero, &p, &s, &SamplerConfig::new(6, 9)).unwrap();
        let b = reverse_sample(zero, &p, &s, &SamplerConfig::new(6, 9)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trajectory.len(), 7);
        assert_eq!(a.trajectory.last().unwrap().t, 0.0);
    }

    #[test]
    fn divergence_reports_step() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let mut calls = 0;
        let bad = |x: &[f64], _: &[f64], _: f64| {
            calls += 1;
            Ok(vec![if calls == 3 { f64::INFINITY } else { 0.0 }; x.len()])
        };
        match reverse_sample(bad, &p, &s, &SamplerConfig::new(10, 0)) {
            Err(Error::Divergence { step }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let zero = |x: &[f64], _: &[f64], _: f64| Ok(vec![0.0; x.len()]);
        assert!(reverse_sample(zero, &p, &s, &SamplerConfig::new(0, 0)).is_err());
    }
}
