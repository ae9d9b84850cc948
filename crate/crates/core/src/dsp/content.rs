//! Frame-synchronous Mel-cepstral content features.

use std::path::Path;

use super::audio::AudioBuffer;
use super::mel::{MelAnalyzer, MelSpectrogram};
use crate::error::{Error, Result};

pub const DEFAULT_CONTENT_DIM: usize = 13;

/// `[n_frames x dim]` cepstral coefficients 1..=dim of the log-Mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentFeatures {
    n_frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl ContentFeatures {
    pub fn new(n_frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * dim {
            return Err(Error::Shape(format!(
                "{} values for {n_frames} x {dim} content features",
                values.len()
            )));
        }
        Ok(Self {
            n_frames,
            dim,
            values,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        &self.values[f * self.dim..(f + 1) * self.dim]
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_frames {
            return Err(Error::Shape(format!(
                "frames [{start}, {}) outside 0..{}",
                start + len,
                self.n_frames
            )));
        }
        Self::new(
            len,
            self.dim,
            self.values[start * self.dim..(start + len) * self.dim].to_vec(),
        )
    }

    /// Pads by repeating the last frame, or truncates.
    pub fn with_frames(&self, n_frames: usize) -> Self {
        let mut values = self.values.clone();
        values.truncate(n_frames * self.dim);
        while values.len() < n_frames * self.dim {
            let last = if self.n_frames > 0 {
                self.frame(self.n_frames - 1).to_vec()
            } else {
                vec![0.0; self.dim]
            };
            values.extend(last);
        }
        Self {
            n_frames,
            dim: self.dim,
            values,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for f in 0..self.n_frames {
            w.write_record(self.frame(f).iter().map(|v| v.to_string()))
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients.
pub fn dct2(x: &[f32], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v as f64 * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()
                })
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

/// Cepstrum of each Mel frame, dropping coefficient 0 (overall loudness).
pub fn cepstrum(mel: &MelSpectrogram, dim: usize) -> ContentFeatures {
    let mut values = Vec::with_capacity(mel.n_frames() * dim);
    for f in 0..mel.n_frames() {
        let c = dct2(mel.frame(f), dim + 1);
        values.extend(c[1..].iter().map(|&v| v as f32));
    }
    ContentFeatures {
        n_frames: mel.n_frames(),
        dim,
        values,
    }
}

/// Content features of 16 kHz audio using the canonical analysis.
pub fn content_features(audio: &AudioBuffer, dim: usize) -> Result<ContentFeatures> {
    audio.require_canonical()?;
    let mel = MelAnalyzer::canonical().mel(audio)?;
    Ok(cepstrum(&mel, dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    use rand::{Rng, SeedableRng};

    /// Harmonic tone over a low noise floor, so no Mel cell sits at the floor.
    fn tone(n: usize) -> AudioBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        AudioBuffer::mono16k(
            (0..n)
                .map(|i| {
                    let t = i as f32 / 16000.0;
                    let h: f32 = (1..20)
                        .map(|k| (2.0 * std::f32::consts::PI * 180.0 * k as f32 * t).sin() / k as f32)
                        .sum();
                    0.1 * h + 0.01 * rng.gen_range(-1.0f32..1.0)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dct_of_constant_is_only_dc() {
        let c = dct2(&[2.0; 80], 14);
        assert!((c[0] - 2.0 * 80f64.sqrt()).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn silence_rows_are_constant() {
        let a = AudioBuffer::mono16k(vec![0.0; 8000]).unwrap();
        let c = content_features(&a, 13).unwrap();
        for f in 1..c.n_frames() {
            assert_eq!(c.frame(f), c.frame(0));
        }
    }

    #[test]
    fn gain_invariance() {
        let a = tone(16000);
        let c1 = content_features(&a, 13).unwrap();
        let c2 = content_features(&a.scaled(0.5), 13).unwrap();
        let mse: f64 = c1
            .values()
            .iter()
            .zip(c2.values())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / c1.values().len() as f64;
        assert!(mse.sqrt() < 0.05, "rms diff {}", mse.sqrt());
    }

    #[test]
    fn frame_count_matches_mel() {
        let an = MelAnalyzer::canonical();
        for n in [321, 4000, 16000, 23456] {
            let a = tone(n);
            assert_eq!(
                content_features(&a, 13).unwrap().n_frames(),
                an.mel(&a).unwrap().n_frames()
            );
        }
    }

    #[test]
    fn requires_16k() {
        let a = AudioBuffer::new(vec![0.0; 1000], 8000).unwrap();
        assert!(content_features(&a, 13).is_err());
    }
}
