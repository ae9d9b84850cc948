// The forward process towards a data-driven prior: closed-form marginals,
// Monte-Carlo moments, the conditional score and the score-matching loss.

use hiervc::diffusion::{
    analytic_conditional_score, dsm_loss, marginal_params, sample_forward, DiffusionPrior, NoiseSchedule,
};
use hiervc::oracle::{finite_diff_check, forward_log_density, moments_of};

pub fn run_example() {
    let sched = NoiseSchedule::default();
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (a, v) = marginal_params(&sched, t).unwrap();
        println!("t = {t:.2}: alpha {a:.6}, variance {v:.6}");
    }

    // x0 = 1 pulled towards z = 0.
    let prior = DiffusionPrior::scalar(0.0);
    let xs: Vec<f64> = (0..20_000)
        .map(|seed| sample_forward(&[1.0], &prior, &sched, 0.5, seed).unwrap()[0])
        .collect();
    let m = moments_of(&xs);
    println!("t = 0.5 draws: mean {:.4} (+-{:.4}), std {:.4}", m.mean, m.se_mean, m.std);
    assert!((m.mean - 0.28383).abs() < 4.0 * m.se_mean);

    let (x0, z, xt, t) = (0.8, -0.3, 0.1, 0.3);
    let p = DiffusionPrior::scalar(z);
    let exact = analytic_conditional_score(&[xt], &[x0], &p, &sched, t).unwrap()[0];
    let numeric = finite_diff_check(|x| forward_log_density(x, &[x0], &[z], &sched, t).unwrap(), &[xt], 1e-3).unwrap()[0];
    println!("score {exact:.6}, finite difference {numeric:.6}");
    assert!((exact - numeric).abs() < 1e-4);

    let batch: Vec<(f64, u64)> = (1..=64).map(|i| (i as f64 / 64.0, i)).collect();
    let perfect = dsm_loss(|x, _, t| analytic_conditional_score(x, &[x0], &p, &sched, t), &[x0], &p, &sched, &batch).unwrap();
    let zero = dsm_loss(|x, _, _| Ok(vec![0.0; x.len()]), &[x0], &p, &sched, &batch).unwrap();
    println!("score-matching loss: exact score {:.2e}, zero estimator {:.3}", perfect.loss, zero.loss);
    assert!(perfect.loss < 1e-10 && zero.loss > 0.1);
}

#[allow(dead_code)]
fn main() {
    run_example();
}
