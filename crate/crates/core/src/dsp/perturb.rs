//! Waveform perturbation that scrambles pitch and timbre cues while keeping
//! the phonetic envelope: resample-and-crop around the buffer centre followed
//! by three random peaking filters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakingBand {
    pub center_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbParams {
    /// Frequency scale; 1.1 raises every component by 10%.
    pub ratio: f64,
    pub bands: [PeakingBand; 3],
}

impl PerturbParams {
    pub fn identity() -> Self {
        let band = PeakingBand {
            center_hz: 1000.0,
            gain_db: 0.0,
            q: 1.0,
        };
        Self {
            ratio: 1.0,
            bands: [band; 3],
        }
    }

    /// Ratio uniform in [0.85, 1.15]; gains uniform in [-6, 6] dB at
    /// log-uniform centres between 100 Hz and 6 kHz.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ratio = rng.gen_range(0.85..=1.15);
        let mut draw = || PeakingBand {
            center_hz: (rng.gen_range(100f64.ln()..6000f64.ln())).exp(),
            gain_db: rng.gen_range(-6.0..=6.0),
            q: 1.0,
        };
        let bands = [draw(), draw(), draw()];
        Self { ratio, bands }
    }
}

/// Linear-interpolated resampling about the centre sample; out-of-range
/// reads are silent.
fn resample_about_center(x: &[f32], ratio: f64) -> Vec<f32> {
    let n = x.len();
    let c = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let pos = c + (i as f64 - c) * ratio;
            if pos < 0.0 || pos > (n - 1) as f64 {
                return 0.0;
            }
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            if frac == 0.0 || i0 + 1 >= n {
                x[i0]
            } else {
                ((1.0 - frac) * x[i0] as f64 + frac * x[i0 + 1] as f64) as f32
            }
        })
        .collect()
}

/// RBJ peaking biquad, direct form I.
fn peaking(x: &mut [f32], band: &PeakingBand, rate: f64) {
    let a = 10f64.powf(band.gain_db / 40.0);
    let w0 = 2.0 * std::f64::consts::PI * band.center_hz / rate;
    let alpha = w0.sin() / (2.0 * band.q);
    let cos = w0.cos();
    let (b0, b1, b2) = (1.0 + alpha * a, -2.0 * cos, 1.0 - alpha * a);
    let (a0, a1, a2) = (1.0 + alpha / a, -2.0 * cos, 1.0 - alpha / a);
    let (b0, b1, b2, a1, a2) = (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in x.iter_mut() {
        let x0 = *s as f64;
        let y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *s = y0 as f32;
    }
}

/// Applies explicit perturbation settings.
pub fn perturb_with(audio: &AudioBuffer, params: &PerturbParams) -> Result<AudioBuffer> {
    if audio.is_empty() {
        return Err(Error::InvalidInput("cannot perturb empty audio".into()));
    }
    if !(params.ratio.is_finite() && params.ratio > 0.0) {
        return Err(Error::InvalidInput(format!("bad resample ratio {}", params.ratio)));
    }
    let mut y = resample_about_center(audio.samples(), params.ratio);
    for band in &params.bands {
        if band.gain_db != 0.0 {
            peaking(&mut y, band, audio.sample_rate_hz() as f64);
        }
    }
    AudioBuffer::new(y, audio.sample_rate_hz())
}

/// Seeded random perturbation; a pure function of `(audio, seed)`.
pub fn perturb_waveform(audio: &AudioBuffer, seed: u64) -> Result<AudioBuffer> {
    perturb_with(audio, &PerturbParams::sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::{track_pitch, TrackerConfig};

    fn sine(freq: f64, n: usize) -> AudioBuffer {
        AudioBuffer::mono16k(
            (0..n)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sine(220.0, 8000);
        assert_eq!(perturb_waveform(&a, 7).unwrap(), perturb_waveform(&a, 7).unwrap());
        assert_ne!(perturb_waveform(&a, 7).unwrap(), perturb_waveform(&a, 8).unwrap());
    }

    #[test]
    fn sampled_params_in_range() {
        for seed in 0..200 {
            let p = PerturbParams::sample(seed);
            assert!((0.85..=1.15).contains(&p.ratio));
            for b in p.bands {
                assert!((-6.0..=6.0).contains(&b.gain_db));
                assert!((100.0..=6000.0).contains(&b.center_hz));
            }
        }
    }

    #[test]
    fn identity_settings_preserve_input() {
        let a = sine(220.0, 4000);
        let y = perturb_with(&a, &PerturbParams::identity()).unwrap();
        for (x, y) in a.samples().iter().zip(y.samples()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn ratio_shifts_pitch() {
        let a = sine(220.0, 16000);
        let mut p = PerturbParams::identity();
        p.ratio = 1.1;
        let y = perturb_with(&a, &p).unwrap();
        assert_eq!(y.len(), a.len());
        let c = track_pitch(&y, &TrackerConfig::default()).unwrap();
        let f0 = c.voiced_median().unwrap();
        assert!((f0 - 242.0).abs() < 5.0, "tracked {f0}");
    }

    #[test]
    fn empty_rejected() {
        let a = AudioBuffer::mono16k(vec![]).unwrap();
        assert!(perturb_waveform(&a, 0).is_err());
    }
}
