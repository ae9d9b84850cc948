//! Verification suites run by `hiervc oracle`: closed-form and Monte-Carlo
//! cross-checks of the diffusion code, gradient checks of every network and
//! pitch-tracker checks on synthetic tones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffusion::{
    analytic_conditional_score, draw_time, dsm_loss, marginal_params, reverse_sample, sample_forward, DiffusionPrior,
    NoiseSchedule, SamplerConfig,
};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::nets::gradcheck::{gradcheck, NetKind};
use crate::oracle::{finite_diff_check, forward_log_density, gaussian_marginal_score, moments_of, GaussianToy};
use crate::pitch::{track_pitch, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Marginal,
    Score,
    Sampler,
    Gradcheck,
    Tracker,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Marginal, Suite::Score, Suite::Sampler, Suite::Gradcheck, Suite::Tracker];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Marginal => "marginal",
            Suite::Score => "score",
            Suite::Sampler => "sampler",
            Suite::Gradcheck => "gradcheck",
            Suite::Tracker => "tracker",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A suite name or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    One(Suite),
}

impl Selection {
    pub fn suites(self) -> Vec<Suite> {
        match self {
            Selection::All => Suite::ALL.to_vec(),
            Selection::One(s) => vec![s],
        }
    }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Selection::All);
        }
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .map(Selection::One)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
                format!("unknown suite '{s}' (expected all, {})", names.join(", "))
            })
    }
}

/// One row of the pass/fail table. `statistic` is compared against
/// `threshold` in the direction the check describes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub check: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(suite: Suite, check: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        Self {
            suite,
            check: check.into(),
            statistic,
            threshold,
            // NaN fails.
            passed: statistic <= threshold,
            detail,
        }
    }

    fn at_least(suite: Suite, check: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        Self {
            passed: statistic >= threshold,
            ..Self::at_most(suite, check, statistic, threshold, detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Knobs of a suite run. `flip_drift_sign` is the sampler mutation used to
/// confirm the sampler suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    pub flip_drift_sign: bool,
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match suite {
        Suite::Marginal => marginal_checks(opts.seed)?,
        Suite::Score => score_checks(opts.seed)?,
        Suite::Sampler => sampler_checks(opts)?,
        Suite::Gradcheck => gradient_checks(opts.seed)?,
        Suite::Tracker => tracker_checks()?,
    };
    Ok(SuiteReport {
        suite,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

const MARGINAL_TABLE: [(f64, f64, f64); 3] = [(0.0, 1.0, 0.0), (0.5, 0.28383, 0.91944), (1.0, 0.006654, 0.999956)];

fn marginal_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let s = NoiseSchedule::default();
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for (t, a, v) in MARGINAL_TABLE {
        let (ma, mv) = marginal_params(&s, t)?;
        worst = worst.max((ma - a).abs()).max((mv - v).abs());
    }
    out.push(CheckResult::at_most(
        Suite::Marginal,
        "tabulated_marginals",
        worst,
        1e-5,
        "t in {0, 0.5, 1}".into(),
    ));

    // Independent quadrature against the closed form on a grid.
    let mut worst: f64 = 0.0;
    for i in 0..=50 {
        let t = i as f64 / 50.0;
        let (a, v) = marginal_params(&s, t)?;
        let (mean, var) = GaussianToy::new(1.0, 0.0, 0.0)?.marginal(&s, t)?;
        worst = worst.max((a - mean).abs()).max((v - var).abs());
    }
    out.push(CheckResult::at_most(
        Suite::Marginal,
        "quadrature_agreement",
        worst,
        1e-10,
        "51 grid points".into(),
    ));

    let n = 100_000u64;
    // Disjoint seed ranges keep the two checks' noise independent.
    for (k, (x0, z, t)) in [(1.0, 0.0, 0.5), (-0.5, 2.0, 0.1)].into_iter().enumerate() {
        let prior = DiffusionPrior::scalar(z);
        let xs = (0..n)
            .map(|i| Ok(sample_forward(&[x0], &prior, &s, t, seed.wrapping_add(k as u64 * n + i))?[0]))
            .collect::<Result<Vec<f64>>>()?;
        let m = moments_of(&xs);
        let (mean, var) = GaussianToy::new(x0, 0.0, z)?.marginal(&s, t)?;
        let z_mean = (m.mean - mean).abs() / m.se_mean;
        let z_std = (m.std - var.sqrt()).abs() / m.se_std;
        out.push(CheckResult::at_most(
            Suite::Marginal,
            &format!("forward_moments_t{t}"),
            z_mean.max(z_std),
            3.0,
            format!("mean {:.5} vs {mean:.5}, std {:.5} vs {:.5} (in standard errors)", m.mean, m.std, var.sqrt()),
        ));
    }
    Ok(out)
}

fn score_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c0e);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x0 = rng.gen_range(-3.0..3.0);
        let z = rng.gen_range(-3.0..3.0);
        let x_t = rng.gen_range(-4.0..4.0);
        let t = rng.gen_range(0.05..1.0);
        let prior = DiffusionPrior::scalar(z);
        let exact = analytic_conditional_score(&[x_t], &[x0], &prior, &s, t)?[0];
        let fd = finite_diff_check(
            |x| forward_log_density(x, &[x0], &[z], &s, t).unwrap_or(f64::NAN),
            &[x_t],
            1e-3,
        )?[0];
        worst = worst.max((exact - fd).abs());
    }
    out.push(CheckResult::at_most(
        Suite::Score,
        "score_vs_finite_difference",
        worst,
        1e-4,
        "100 random (x0, z, x_t, t)".into(),
    ));

    let x0: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let prior = DiffusionPrior::new((0..8).map(|_| rng.gen_range(-2.0..2.0)).collect(), vec![8])?;
    let batch: Vec<(f64, u64)> = (0..256).map(|i| (draw_time(&mut rng), seed.wrapping_add(i))).collect();
    let exact = dsm_loss(
        |x, _, t| analytic_conditional_score(x, &x0, &prior, &s, t),
        &x0,
        &prior,
        &s,
        &batch,
    )?;
    out.push(CheckResult::at_most(
        Suite::Score,
        "dsm_with_exact_score",
        exact.loss,
        1e-10,
        "256 draws".into(),
    ));

    // x0 = z: the weighted target is a unit normal, so the zero estimator
    // scores E[eps^2] = 1.
    let toy = DiffusionPrior::scalar(0.7);
    let batch: Vec<(f64, u64)> = (0..10_000).map(|i| (draw_time(&mut rng), seed.wrapping_add(i))).collect();
    let zero = dsm_loss(|x, _, _| Ok(vec![0.0; x.len()]), &[0.7], &toy, &s, &batch)?;
    out.push(CheckResult::at_most(
        Suite::Score,
        "dsm_zero_estimator",
        (zero.loss - 1.0).abs(),
        0.05,
        format!("loss {:.4}, expected 1", zero.loss),
    ));
    Ok(out)
}

fn sampler_checks(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let s = NoiseSchedule::default();
    let mut out = Vec::new();
    for (name, mu0, sigma0, z) in [("unit_gaussian", 0.0, 1.0, 0.0), ("shifted_gaussian", 2.0, 0.5, -1.0)] {
        let toy = GaussianToy::new(mu0, sigma0, z)?;
        let prior = DiffusionPrior::scalar(z);
        let mut xs = Vec::with_capacity(10_000);
        for i in 0..10_000u64 {
            let cfg = SamplerConfig {
                flip_drift_sign: opts.flip_drift_sign,
                ..SamplerConfig::new(100, opts.seed.wrapping_add(i))
            };
            let score = |x: &[f64], _: &[f64], t: f64| {
                x.iter().map(|&v| gaussian_marginal_score(&toy, v, &s, t)).collect()
            };
            match reverse_sample(score, &prior, &s, &cfg) {
                Ok(o) => xs.push(o.x[0]),
                Err(Error::Divergence { .. }) => xs.push(f64::NAN),
                Err(e) => return Err(e),
            }
        }
        let m = moments_of(&xs);
        out.push(CheckResult::at_most(
            Suite::Sampler,
            &format!("{name}_mean"),
            (m.mean - mu0).abs(),
            0.05,
            format!("terminal mean {:.4}, target {mu0}", m.mean),
        ));
        out.push(CheckResult::at_most(
            Suite::Sampler,
            &format!("{name}_std"),
            (m.std / sigma0 - 1.0).abs(),
            0.05,
            format!("terminal std {:.4}, target {sigma0}", m.std),
        ));
    }
    Ok(out)
}

fn gradient_checks(seed: u64) -> Result<Vec<CheckResult>> {
    NetKind::ALL
        .into_iter()
        .map(|kind| {
            let r = gradcheck(kind, seed.wrapping_add(1), 1e-3, 6)?;
            Ok(CheckResult::at_most(
                Suite::Gradcheck,
                kind.name(),
                r.max_rel_err,
                1e-3,
                format!("{} tensors, {} coordinates, worst {}", r.n_tensors, r.n_coords, r.worst_tensor),
            ))
        })
        .collect()
}

const RATE: f64 = 16_000.0;

/// Phase-continuous sine following `f0_at(t)`; zero where `f0_at` is zero.
pub fn sine_track(f0_at: impl Fn(f64) -> f64, n: usize, amp: f64) -> Result<AudioBuffer> {
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let f = f0_at(i as f64 / RATE);
            let v = if f > 0.0 { amp * phase.sin() } else { 0.0 };
            phase += 2.0 * std::f64::consts::PI * f / RATE;
            v as f32
        })
        .collect();
    AudioBuffer::mono16k(samples)
}

fn tracker_checks() -> Result<Vec<CheckResult>> {
    let cfg = TrackerConfig::default();
    let hop = cfg.hop;
    let center = |i: usize| (i * hop + hop / 2) as f64 / RATE;
    let mut out = Vec::new();

    // 440 Hz lies above the default band, so the tone check widens it.
    let wide = TrackerConfig {
        f_max_hz: 500.0,
        ..cfg.clone()
    };
    let mut worst: f64 = 0.0;
    for f in [110.0, 220.0, 440.0] {
        let c = track_pitch(&sine_track(|_| f, 16_000, 0.5)?, &wide)?;
        let med = c.voiced_median().unwrap_or(0.0);
        worst = worst.max((med - f).abs());
    }
    out.push(CheckResult::at_most(
        Suite::Tracker,
        "tone_median_error_hz",
        worst,
        3.0,
        "110, 220 and 440 Hz tones, band up to 500 Hz".into(),
    ));

    // Frames whose window runs off either end are excluded.
    let glide = |t: f64| 150.0 + 150.0 * t;
    let c = track_pitch(&sine_track(glide, 16_000, 0.5)?, &cfg)?;
    let edge = cfg.window.div_ceil(hop) + 1;
    let mut worst: f64 = 0.0;
    for i in edge..c.len() - edge {
        let err = if c.voiced()[i] { (c.f0_hz()[i] - glide(center(i))).abs() } else { f64::INFINITY };
        worst = worst.max(err);
    }
    out.push(CheckResult::at_most(
        Suite::Tracker,
        "glide_frame_error_hz",
        worst,
        5.0,
        "150 to 300 Hz over 1 s".into(),
    ));

    let segments = [(0.4, 200.0), (0.3, 0.0), (0.5, 130.0), (0.4, 0.0), (0.3, 310.0), (0.3, 0.0)];
    let at = |t: f64| {
        let mut acc = 0.0;
        for (len, f) in segments {
            acc += len;
            if t < acc {
                return f;
            }
        }
        0.0
    };
    let total: f64 = segments.iter().map(|s| s.0).sum();
    let c = track_pitch(&sine_track(at, (total * RATE) as usize, 0.5)?, &cfg)?;
    let correct = (0..c.len()).filter(|&i| c.voiced()[i] == (at(center(i)) > 0.0)).count();
    out.push(CheckResult::at_least(
        Suite::Tracker,
        "voicing_accuracy",
        correct as f64 / c.len() as f64,
        0.95,
        format!("{correct} of {} frames", c.len()),
    ));
    Ok(out)
}

/// Fixed-width pass/fail table.
pub fn format_table(reports: &[SuiteReport]) -> String {
    let mut s = format!(
        "{:<10} {:<30} {:>12} {:>12}  {:<6} {}\n",
        "suite", "check", "statistic", "threshold", "result", "detail"
    );
    for r in reports {
        for c in &r.checks {
            s.push_str(&format!(
                "{:<10} {:<30} {:>12.4e} {:>12.4e}  {:<6} {}\n",
                c.suite.name(),
                c.check,
                c.statistic,
                c.threshold,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            ));
        }
    }
    s
}

pub fn write_csv(path: impl AsRef<Path>, reports: &[SuiteReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in reports {
        for c in &r.checks {
            w.serialize(c).map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parses() {
        assert_eq!("all".parse::<Selection>().unwrap(), Selection::All);
        assert_eq!("score".parse::<Selection>().unwrap(), Selection::One(Suite::Score));
        assert!("nope".parse::<Selection>().unwrap_err().contains("unknown suite"));
    }

    #[test]
    fn marginal_and_score_pass() {
        for suite in [Suite::Marginal, Suite::Score] {
            let r = run_suite(suite, &SuiteOptions::default()).unwrap();
            assert!(r.passed(), "{}", format_table(&[r]));
        }
    }

    #[test]
    fn flipped_drift_fails_the_sampler_suite() {
        let good = run_suite(Suite::Sampler, &SuiteOptions::default()).unwrap();
        assert!(good.passed(), "{}", format_table(&[good.clone()]));
        let bad = run_suite(
            Suite::Sampler,
            &SuiteOptions {
                flip_drift_sign: true,
                ..SuiteOptions::default()
            },
        )
        .unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn tracker_suite_passes() {
        let r = run_suite(Suite::Tracker, &SuiteOptions::default()).unwrap();
        assert!(r.passed(), "{}", format_table(&[r]));
    }
}
