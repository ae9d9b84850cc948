use std::path::Path;

use crate::error::{Error, Result};

/// Canonical pipeline sample rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// 16 kHz buffer.
    pub fn mono16k(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    /// Rejects rates other than the canonical 16 kHz and empty buffers.
    pub fn require_canonical(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "expected {SAMPLE_RATE} Hz audio, got {} Hz",
                self.sample_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("audio is empty".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Reads a 16-bit PCM mono WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        if len == 0 {
            return Err(Error::format(path, "empty file"));
        }
        let reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::format(
                path,
                format!("expected mono audio, got {} channels", spec.channels),
            ));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::format(
                path,
                format!(
                    "expected 16-bit PCM, got {:?} with {} bits per sample",
                    spec.sample_format, spec.bits_per_sample
                ),
            ));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if samples.is_empty() {
            return Err(Error::format(path, "no samples"));
        }
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM mono, clipping to [-1, 1].
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let wrap = |e: hound::Error| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(wrap)?;
        }
        writer.finalize().map_err(wrap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(AudioBuffer::new(vec![0.0, f32::NAN], 16000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn canonical_rate_enforced() {
        let a = AudioBuffer::new(vec![0.0; 10], 22050).unwrap();
        assert!(a.require_canonical().is_err());
        let b = AudioBuffer::mono16k(vec![]).unwrap();
        assert!(b.require_canonical().is_err());
    }

    #[test]
    fn wav_round_trip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..400).map(|i| (i as f32 * 0.05).sin() * 0.5).collect();
        let a = AudioBuffer::mono16k(samples.clone()).unwrap();
        a.write_wav(&path).unwrap();
        let b = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(b.sample_rate_hz(), 16000);
        for (x, y) in samples.iter().zip(b.samples()) {
            assert!((x - y).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn stereo_and_float_wavs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = AudioBuffer::read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("mono"));

        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(AudioBuffer::read_wav(&path).unwrap_err().to_string().contains("16-bit"));
    }

    #[test]
    fn empty_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(
            AudioBuffer::read_wav(&path),
            Err(Error::Format { .. })
        ));
    }
}
