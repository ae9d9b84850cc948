//! Log-Mel to waveform by non-negative Mel inversion plus Griffin-Lim phase
//! retrieval. Iterations run in the padded analysis domain with the
//! least-squares inverse STFT, so the spectral distance
//! `|| |STFT(x)| - S ||` never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex32;

use super::audio::{AudioBuffer, SAMPLE_RATE};
use super::mel::{mel_project, MelAnalyzer, MelFilterbank, MelSpectrogram, LOG_FLOOR};
use super::stft::Spectrogram;
use crate::error::{Error, Result};

const NNLS_ITERS: usize = 200;

/// Sparse view of a filterbank: for each Mel row, the first bin and weights
/// of its non-zero support.
struct SparseBank {
    rows: Vec<(usize, Vec<f32>)>,
    n_bins: usize,
}

impl SparseBank {
    fn new(fb: &MelFilterbank) -> Self {
        let rows = (0..fb.n_mels())
            .map(|m| {
                let r = fb.row(m);
                let first = r.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = r.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, r[first..=last].to_vec())
            })
            .collect();
        Self {
            rows,
            n_bins: fb.n_bins(),
        }
    }

    fn forward(&self, p: &[f32], out: &mut [f32]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.rows) {
            *o = w.iter().zip(&p[*first..]).map(|(a, b)| a * b).sum();
        }
    }

    fn transpose(&self, m: &[f32], out: &mut [f32]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&mv, (first, w)) in m.iter().zip(&self.rows) {
            for (o, &wv) in out[*first..].iter_mut().zip(w) {
                *o += wv * mv;
            }
        }
    }
}

/// Non-negative power spectrum whose Mel projection best matches `target`
/// (multiplicative updates on `|| fb p - target ||^2`).
fn invert_power(bank: &SparseBank, target: &[f32]) -> Vec<f32> {
    let mut numer = vec![0.0f32; bank.n_bins];
    bank.transpose(target, &mut numer);
    let mut p = numer.clone();
    let mut proj = vec![0.0f32; target.len()];
    let mut denom = vec![0.0f32; bank.n_bins];
    for _ in 0..NNLS_ITERS {
        bank.forward(&p, &mut proj);
        bank.transpose(&proj, &mut denom);
        for ((pv, &n), &d) in p.iter_mut().zip(&numer).zip(&denom) {
            if d > 0.0 {
                *pv *= n / d;
            }
        }
    }
    p
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub audio: AudioBuffer,
    /// Spectral distance after each iteration; non-increasing.
    pub spectral_distance: Vec<f64>,
    /// L2 distance between the re-analysed log-Mel and the input, per iteration.
    pub mel_distance: Vec<f64>,
}

#[derive(Debug)]
pub struct GriffinLim {
    analyzer: MelAnalyzer,
    bank: SparseBank,
    pub seed: u64,
}

impl std::fmt::Debug for SparseBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SparseBank({} rows)", self.rows.len())
    }
}

impl GriffinLim {
    pub fn new(analyzer: MelAnalyzer) -> Self {
        let bank = SparseBank::new(analyzer.filterbank());
        Self {
            analyzer,
            bank,
            seed: 0,
        }
    }

    pub fn canonical() -> Self {
        Self::new(MelAnalyzer::canonical())
    }

    /// Magnitude spectrogram implied by a log-Mel; floor cells map to zero.
    pub fn target_magnitude(&self, mel: &MelSpectrogram) -> Result<Vec<f32>> {
        let n_mels = self.analyzer.filterbank().n_mels();
        if mel.n_mels() != n_mels {
            return Err(Error::Shape(format!(
                "mel has {} bins, inverter expects {n_mels}",
                mel.n_mels()
            )));
        }
        let n_bins = self.bank.n_bins;
        let mut mag = Vec::with_capacity(mel.n_frames() * n_bins);
        for f in 0..mel.n_frames() {
            let target: Vec<f32> = mel
                .frame(f)
                .iter()
                .map(|&v| (v.exp() - LOG_FLOOR).max(0.0))
                .collect();
            mag.extend(invert_power(&self.bank, &target).into_iter().map(f32::sqrt));
        }
        Ok(mag)
    }

    pub fn run(&self, mel: &MelSpectrogram, iterations: usize) -> Result<GriffinLimOutput> {
        if iterations == 0 {
            return Err(Error::InvalidInput("griffin-lim needs at least one iteration".into()));
        }
        if mel.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite mel value".into()));
        }
        let stft = self.analyzer.stft();
        let hop = stft.config().hop;
        let n_frames = mel.n_frames();
        let n_bins = self.bank.n_bins;
        let mag = self.target_magnitude(mel)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut spec = Spectrogram::new(
            n_frames,
            n_bins,
            mag.iter()
                .map(|&m| Complex32::from_polar(m, rng.gen_range(0.0..std::f32::consts::TAU)))
                .collect(),
        )?;
        let mut spectral_distance = Vec::with_capacity(iterations);
        let mut mel_distance = Vec::with_capacity(iterations);
        let mut padded = Vec::new();
        for _ in 0..iterations {
            padded = stft.synthesize_padded(&spec);
            let analysed = stft.analyze_padded(&padded);
            let mut dist = 0.0f64;
            let mut next = Vec::with_capacity(n_frames * n_bins);
            for (c, &m) in analysed.data().iter().zip(&mag) {
                let a = c.norm();
                dist += ((a - m) as f64).powi(2);
                let phase = if a > 0.0 { c / a } else { Complex32::new(1.0, 0.0) };
                next.push(phase * m);
            }
            spectral_distance.push(dist.sqrt());
            let remel = mel_project(&analysed, self.analyzer.filterbank())?;
            mel_distance.push(
                remel
                    .values()
                    .iter()
                    .zip(mel.values())
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
            spec = Spectrogram::new(n_frames, n_bins, next)?;
        }
        let samples = stft.unpad(&padded, n_frames * hop);
        Ok(GriffinLimOutput {
            audio: AudioBuffer::new(samples, SAMPLE_RATE)?,
            spectral_distance,
            mel_distance,
        })
    }
}

/// Griffin-Lim with the canonical analysis and phase seed 0.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize) -> Result<AudioBuffer> {
    Ok(GriffinLim::canonical().run(mel, iterations)?.audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::{track_pitch, TrackerConfig};

    fn sine(freq: f32, n: usize) -> AudioBuffer {
        AudioBuffer::mono16k(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sine_round_trip_keeps_pitch() {
        let gl = GriffinLim::canonical();
        let mel = gl.analyzer.mel(&sine(440.0, 16000)).unwrap();
        let out = gl.run(&mel, 60).unwrap();
        let cfg = TrackerConfig {
            f_max_hz: 500.0,
            ..TrackerConfig::default()
        };
        let c = track_pitch(&out.audio, &cfg).unwrap();
        let f0 = c.voiced_median().expect("voiced frames");
        assert!((f0 - 440.0).abs() <= 5.0, "tracked {f0}");
    }

    #[test]
    fn floor_mel_is_silent() {
        let out = griffin_lim(&MelSpectrogram::floor(20, 80), 5).unwrap();
        assert!(out.rms() < 1e-3);
    }

    #[test]
    fn objective_never_increases_on_random_mels() {
        let gl = GriffinLim::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let frames = rng.gen_range(4..12);
            let values = (0..frames * 80).map(|_| rng.gen_range(-8.0f32..2.0)).collect();
            let mel = MelSpectrogram::new(frames, 80, values).unwrap();
            let out = gl.run(&mel, 15).unwrap();
            for w in out.spectral_distance.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-5), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn mel_distance_shrinks_on_analysed_audio() {
        let gl = GriffinLim::canonical();
        let mut phase = 0.0f64;
        let samples: Vec<f32> = (0..12000)
            .map(|i| {
                let f = 140.0 + 40.0 * (i as f64 / 12000.0);
                phase += std::f64::consts::TAU * f / 16000.0;
                let h: f64 = (1..30).map(|k| (k as f64 * phase).sin() / k as f64).sum();
                (0.2 * h) as f32
            })
            .collect();
        let mel = gl.analyzer.mel(&AudioBuffer::mono16k(samples).unwrap()).unwrap();
        let out = gl.run(&mel, 60).unwrap();
        assert!(out.mel_distance[59] <= out.mel_distance[0]);
        assert!(out.spectral_distance[59] <= out.spectral_distance[0]);
    }

    #[test]
    fn non_finite_and_zero_iterations_rejected() {
        let gl = GriffinLim::canonical();
        assert!(gl.run(&MelSpectrogram::floor(3, 80), 0).is_err());
    }
}
