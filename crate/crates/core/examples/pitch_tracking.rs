// Tracks a glide, then moves its z-scored contour onto another speaker's
// statistics the way the denormalisation baseline does.

use hiervc::dsp::AudioBuffer;
use hiervc::pitch::{compute_stats, denormalize_f0, normalize_f0, track_pitch, PitchStats, TrackerConfig};

pub fn run_example() {
    let glide = |t: f64| 150.0 + 150.0 * t;
    let mut phase = 0.0f64;
    let samples = (0..16000)
        .map(|i| {
            let v = 0.5 * phase.sin();
            phase += 2.0 * std::f64::consts::PI * glide(i as f64 / 16000.0) / 16000.0;
            v as f32
        })
        .collect();
    let cfg = TrackerConfig::default();
    let contour = track_pitch(&AudioBuffer::mono16k(samples).unwrap(), &cfg).unwrap();
    println!("{} contour samples, {} voiced", contour.len(), contour.n_voiced());

    let worst = (10..contour.len() - 10)
        .map(|i| (contour.f0_hz()[i] - glide((i * 80 + 40) as f64 / 16000.0)).abs())
        .fold(0.0, f64::max);
    println!("worst interior error {worst:.2} Hz");
    assert!(worst <= 5.0);

    let stats = compute_stats(&contour).unwrap();
    let norm = normalize_f0(&contour, &stats);
    let target = PitchStats::new(240.0, 12.0).unwrap();
    let moved = denormalize_f0(&norm, &target, cfg.band()).unwrap();
    println!(
        "source mean {:.1} Hz -> converted mean {:.1} Hz",
        stats.mean_hz,
        moved.voiced_mean().unwrap()
    );
    assert!((moved.voiced_mean().unwrap() - 240.0).abs() < 1e-6);
    assert_eq!(moved.voiced(), contour.voiced());
}

#[allow(dead_code)]
fn main() {
    run_example();
}
