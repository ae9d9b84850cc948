// Reverse-time sampling with a known score: data N(2, 0.5^2) and prior
// z = -1. Shows the effect of the step count and of a flipped drift.

use hiervc::diffusion::{reverse_sample, DiffusionPrior, NoiseSchedule, SamplerConfig};
use hiervc::oracle::{gaussian_marginal_score, moments_of, GaussianToy};

fn terminal(steps: usize, flip: bool) -> (f64, f64) {
    let sched = NoiseSchedule::default();
    let toy = GaussianToy::new(2.0, 0.5, -1.0).unwrap();
    let prior = DiffusionPrior::scalar(-1.0);
    let xs: Vec<f64> = (0..2000)
        .map(|seed| {
            let cfg = SamplerConfig {
                flip_drift_sign: flip,
                ..SamplerConfig::new(steps, seed)
            };
            let score = |x: &[f64], _: &[f64], t: f64| {
                x.iter().map(|&v| gaussian_marginal_score(&toy, v, &sched, t)).collect()
            };
            reverse_sample(score, &prior, &sched, &cfg).map_or(f64::NAN, |o| o.x[0])
        })
        .collect();
    let m = moments_of(&xs);
    (m.mean, m.std)
}

pub fn run_example() {
    for steps in [6, 30, 100] {
        let (mean, std) = terminal(steps, false);
        println!("{steps:>3} steps: mean {mean:.3}, std {std:.3}");
        // Six steps are coarse enough to leave a visible bias.
        if steps >= 30 {
            assert!((mean - 2.0).abs() < 0.05 && (std - 0.5).abs() < 0.05);
        }
    }
    let (mean, std) = terminal(100, true);
    println!("flipped drift: mean {mean:.3}, std {std:.3}");
    assert!(!((mean - 2.0).abs() < 0.1 && (std - 0.5).abs() < 0.1));
}

#[allow(dead_code)]
fn main() {
    run_example();
}
