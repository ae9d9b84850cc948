// Log-Mel and cepstral content analysis of a two-tone signal, then
// Griffin-Lim inversion of a 440 Hz tone checked with the pitch tracker.

use hiervc::dsp::{content_features, AudioBuffer, GriffinLim, MelAnalyzer};
use hiervc::pitch::{track_pitch, TrackerConfig};

fn tone(parts: &[(f64, f64)], seconds: f64) -> AudioBuffer {
    let n = (seconds * 16000.0) as usize;
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            parts.iter().map(|&(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin()).sum::<f64>() as f32
        })
        .collect();
    AudioBuffer::mono16k(x).unwrap()
}

pub fn run_example() {
    let analyzer = MelAnalyzer::canonical();
    let audio = tone(&[(220.0, 0.4), (660.0, 0.2)], 1.0);
    let mel = analyzer.mel(&audio).unwrap();
    assert_eq!((mel.n_frames(), mel.n_mels()), (50, 80));

    let mid = mel.frame(25);
    let peak = (0..80).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
    let fb = analyzer.filterbank();
    println!("loudest Mel bin {peak} centred at {:.0} Hz", fb.center_hz(peak));
    assert!((fb.center_hz(peak) - 220.0).abs() < 60.0);

    let content = content_features(&audio, 13).unwrap();
    println!("content: {} frames x {} coefficients", content.n_frames(), content.dim());
    assert_eq!(content.n_frames(), mel.n_frames());

    let a440 = tone(&[(440.0, 0.5)], 1.0);
    let out = GriffinLim::canonical().run(&analyzer.mel(&a440).unwrap(), 60).unwrap();
    let d = &out.spectral_distance;
    println!("Griffin-Lim spectral distance {:.3} -> {:.3}", d[0], d[d.len() - 1]);
    let wide = TrackerConfig {
        f_max_hz: 500.0,
        ..TrackerConfig::default()
    };
    let f0 = track_pitch(&out.audio, &wide).unwrap().voiced_median().unwrap();
    println!("tracked pitch of the reconstruction: {f0:.1} Hz");
    assert!((f0 - 440.0).abs() <= 5.0);
}

#[allow(dead_code)]
fn main() {
    run_example();
}
