use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Lower time cutoff for training draws; the conditional score is singular at 0.
pub const T_EPS: f64 = 1e-5;

/// Data-driven prior: the anchor `z` of the forward SDE, optionally with a
/// mask (true = masked cell) recorded by frequency masking.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPrior {
    pub z: Vec<f64>,
    pub shape: Vec<usize>,
    pub mask: Option<Vec<bool>>,
}

impl DiffusionPrior {
    pub fn new(z: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != z.len() {
            return Err(Error::Shape(format!(
                "prior of {} values for shape {shape:?}",
                z.len()
            )));
        }
        Ok(Self {
            z,
            shape,
            mask: None,
        })
    }

    pub fn scalar(z: f64) -> Self {
        Self {
            z: vec![z],
            shape: vec![1],
            mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&v| v).count())
    }

    pub(crate) fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if n != self.z.len() {
            return Err(Error::Shape(format!(
                "{what} has {n} values, prior has {}",
                self.z.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `X_t = alpha x0 + (1 - alpha) z + sqrt(variance) eps` with noise from `rng`.
pub fn sample_forward_with(
    x0: &[f64],
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    t: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    prior.check_len(x0.len(), "x0")?;
    let m = sched.marginal(t)?;
    let eps = normal_vec(rng, x0.len());
    let sd = m.std();
    let xt = x0
        .iter()
        .zip(&prior.z)
        .zip(&eps)
        .map(|((&x, &z), &e)| m.mean(x, z) + sd * e)
        .collect();
    Ok((xt, eps))
}

/// Seeded forward-marginal draw.
pub fn sample_forward(
    x0: &[f64],
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    t: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_forward_with(x0, prior, sched, t, &mut rng)?.0)
}

/// Gradient of the Gaussian forward log-density with respect to `x_t`.
pub fn analytic_conditional_score(
    x_t: &[f64],
    x0: &[f64],
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    t: f64,
) -> Result<Vec<f64>> {
    prior.check_len(x_t.len(), "x_t")?;
    prior.check_len(x0.len(), "x0")?;
    let m = sched.marginal(t)?;
    if m.variance <= 0.0 {
        return Err(Error::SingularTime(t));
    }
    Ok(x_t
        .iter()
        .zip(x0)
        .zip(&prior.z)
        .map(|((&xt, &x), &z)| -(xt - m.mean(x, z)) / m.variance)
        .collect())
}

/// One denoising-score-matching draw: the noisy input, its regression
/// target and the loss weight.
#[derive(Debug, Clone)]
pub struct DsmDraw {
    pub t: f64,
    pub x_t: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

pub fn dsm_draw(
    x0: &[f64],
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    t: f64,
    rng: &mut impl Rng,
) -> Result<DsmDraw> {
    if !(t > T_EPS && t <= 1.0) {
        return Err(Error::Domain(format!(
            "training time {t} outside ({T_EPS}, 1]"
        )));
    }
    let (x_t, _) = sample_forward_with(x0, prior, sched, t, rng)?;
    let target = analytic_conditional_score(&x_t, x0, prior, sched, t)?;
    Ok(DsmDraw {
        t,
        weight: sched.loss_weight(t)?,
        x_t,
        target,
    })
}

/// Training time drawn uniformly from `(T_EPS, 1]`.
pub fn draw_time(rng: &mut impl Rng) -> f64 {
    T_EPS + (1.0 - T_EPS) * (1.0 - rng.gen::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsmLoss {
    pub loss: f64,
    pub terms: Vec<f64>,
}

/// Mean over the batch of `lambda_t * mean_i (score_i - target_i)^2`.
/// Each batch entry is `(t, seed)`; the score function receives
/// `(x_t, z, t)`.
pub fn dsm_loss<F>(
    mut score_fn: F,
    x0: &[f64],
    prior: &DiffusionPrior,
    sched: &NoiseSchedule,
    batch: &[(f64, u64)],
) -> Result<DsmLoss>
where
    F: FnMut(&[f64], &[f64], f64) -> Result<Vec<f64>>,
{
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty dsm batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for &(t, seed) in batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = dsm_draw(x0, prior, sched, t, &mut rng)?;
        let score = score_fn(&draw.x_t, &prior.z, t)?;
        prior.check_len(score.len(), "score")?;
        if score.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                t,
                what: "score estimator returned a non-finite value".into(),
            });
        }
        let mse = score
            .iter()
            .zip(&draw.target)
            .map(|(s, g)| (s - g).powi(2))
            .sum::<f64>()
            / score.len() as f64;
        terms.push(draw.weight * mse);
    }
    // Sorted summation keeps the mean independent of batch order.
    let mut sorted = terms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let loss = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(DsmLoss { loss, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_zero_returns_x0() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::new(vec![0.5, -1.0], vec![2]).unwrap();
        assert_eq!(sample_forward(&[1.0, 2.0], &p, &s, 0.0, 9).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn sample_forward_is_deterministic() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(-1.0);
        assert_eq!(
            sample_forward(&[2.0], &p, &s, 0.5, 4).unwrap(),
            sample_forward(&[2.0], &p, &s, 0.5, 4).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        assert!(matches!(
            sample_forward(&[1.0, 2.0], &p, &s, 0.5, 0),
            Err(Error::Shape(_))
        ));
        assert!(DiffusionPrior::new(vec![0.0; 3], vec![2, 2]).is_err());
    }

    #[test]
    fn score_at_mean_is_zero_and_scalar_value() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let m = s.marginal(0.5).unwrap();
        let at_mean = analytic_conditional_score(&[m.mean(1.0, 0.0)], &[1.0], &p, &s, 0.5).unwrap();
        assert_eq!(at_mean, vec![0.0]);
        let v = analytic_conditional_score(&[1.0], &[1.0], &p, &s, 0.5).unwrap()[0];
        assert!((v - (-0.77892)).abs() < 1e-5, "{v}");
    }

    #[test]
    fn score_singular_at_t_zero() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        assert!(matches!(
            analytic_conditional_score(&[1.0], &[1.0], &p, &s, 0.0),
            Err(Error::SingularTime(_))
        ));
    }

    #[test]
    fn dsm_loss_zero_for_analytic_score() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::new(vec![0.3, -0.2, 1.0], vec![3]).unwrap();
        let x0 = [1.0, 0.5, -0.5];
        let batch: Vec<(f64, u64)> = (0..20).map(|i| (0.05 * (i + 1) as f64, i)).collect();
        let oracle = |xt: &[f64], _z: &[f64], t: f64| analytic_conditional_score(xt, &x0, &p, &s, t);
        let l = dsm_loss(oracle, &x0, &p, &s, &batch).unwrap();
        assert!(l.loss < 1e-20);
    }

    #[test]
    fn dsm_loss_invariant_to_batch_order() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let batch: Vec<(f64, u64)> = (0..50).map(|i| (0.02 * (i + 1) as f64, i * 7)).collect();
        let mut rev = batch.clone();
        rev.reverse();
        let zero = |xt: &[f64], _: &[f64], _: f64| Ok(vec![0.0; xt.len()]);
        let a = dsm_loss(zero, &[0.0], &p, &s, &batch).unwrap();
        let b = dsm_loss(zero, &[0.0], &p, &s, &rev).unwrap();
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn dsm_reports_non_finite_scores() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let bad = |_: &[f64], _: &[f64], _: f64| Ok(vec![f64::NAN]);
        match dsm_loss(bad, &[0.0], &p, &s, &[(0.25, 1)]) {
            Err(Error::Numerical { t, .. }) => assert_eq!(t, 0.25),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dsm_rejects_times_below_cutoff() {
        let s = NoiseSchedule::default();
        let p = DiffusionPrior::scalar(0.0);
        let zero = |xt: &[f64], _: &[f64], _: f64| Ok(vec![0.0; xt.len()]);
        assert!(dsm_loss(zero, &[0.0], &p, &s, &[(1e-6, 0)]).is_err());
    }

    #[test]
    fn drawn_times_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let t = draw_time(&mut rng);
            assert!(t > T_EPS && t <= 1.0);
        }
    }
}
