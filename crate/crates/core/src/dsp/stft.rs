//! Short-time Fourier analysis with a periodic Hann window.
//!
//! The signal is reflect-padded by `(window - hop) / 2` samples on each side,
//! so an input of `n` samples yields `max(1, n / hop)` frames and frame `f`
//! is centred on sample `f * hop + hop / 2`. Frame `f` covers padded samples
//! `[f * hop, f * hop + window)`.

use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 1280,
            hop: 320,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn pad(&self) -> usize {
        (self.window - self.hop) / 2
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        (n_samples / self.hop).max(1)
    }

    /// Length of the padded signal the frames tile exactly.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        (n_frames - 1) * self.hop + self.window
    }

    /// Padded-domain sample range `[start, end)` covered by frame `f`.
    pub fn frame_span(&self, f: usize) -> (isize, isize) {
        let start = (f * self.hop) as isize - self.pad() as isize;
        (start, start + self.window as isize)
    }

    fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window < self.hop {
            return Err(Error::InvalidInput(format!(
                "window ({}) must be >= hop ({}) > 0",
                self.window, self.hop
            )));
        }
        if (self.window - self.hop) % 2 != 0 {
            return Err(Error::InvalidInput(
                "window - hop must be even for symmetric padding".into(),
            ));
        }
        Ok(())
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / n as f64;
            (x.sin() * x.sin()) as f32
        })
        .collect()
}

/// Complex spectrogram, row-major `[n_frames x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    n_frames: usize,
    n_bins: usize,
    data: Vec<Complex32>,
}

impl Spectrogram {
    pub fn new(n_frames: usize, n_bins: usize, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != n_frames * n_bins {
            return Err(Error::Shape(format!(
                "{} values for {n_frames} x {n_bins} spectrogram",
                data.len()
            )));
        }
        Ok(Self {
            n_frames,
            n_bins,
            data,
        })
    }

    pub fn zeros(n_frames: usize, n_bins: usize) -> Self {
        Self {
            n_frames,
            n_bins,
            data: vec![Complex32::new(0.0, 0.0); n_frames * n_bins],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame(&self, f: usize) -> &[Complex32] {
        &self.data[f * self.n_bins..(f + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [Complex32] {
        &mut self.data[f * self.n_bins..(f + 1) * self.n_bins]
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn magnitudes(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn scaled(&self, k: f32) -> Self {
        Self {
            n_frames: self.n_frames,
            n_bins: self.n_bins,
            data: self.data.iter().map(|c| c * k).collect(),
        }
    }
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Analysis/synthesis engine holding the FFT plans and window.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f32>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: hann(cfg.window),
            forward: planner.plan_fft_forward(cfg.window),
            inverse: planner.plan_fft_inverse(cfg.window),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    /// Reflect-pads `samples` into the frame-tiled padded domain.
    pub fn pad_signal(&self, samples: &[f32]) -> Vec<f32> {
        let n_frames = self.cfg.n_frames(samples.len());
        let len = self.cfg.padded_len(n_frames);
        let pad = self.cfg.pad() as isize;
        let n = samples.len();
        (0..len as isize)
            .map(|i| {
                let j = i - pad;
                if n > pad as usize {
                    samples[mirror(j, n)]
                } else if j >= 0 && (j as usize) < n {
                    samples[j as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        if audio.is_empty() {
            return Err(Error::InvalidInput("cannot analyze empty audio".into()));
        }
        Ok(self.analyze_padded(&self.pad_signal(audio.samples())))
    }

    /// STFT of an already padded signal whose length tiles the frames.
    pub fn analyze_padded(&self, padded: &[f32]) -> Spectrogram {
        let w = self.cfg.window;
        let hop = self.cfg.hop;
        let n_frames = (padded.len() - w) / hop + 1;
        let n_bins = self.cfg.n_bins();
        let mut out = Spectrogram::zeros(n_frames, n_bins);
        let mut buf = vec![Complex32::new(0.0, 0.0); w];
        let mut scratch = vec![Complex32::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let seg = &padded[f * hop..f * hop + w];
            for ((b, &x), &win) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex32::new(x * win, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.frame_mut(f).copy_from_slice(&buf[..n_bins]);
        }
        out
    }

    /// Least-squares inverse in the padded domain: weighted overlap-add
    /// divided by the summed squared window. Samples no window touches are 0.
    pub fn synthesize_padded(&self, spec: &Spectrogram) -> Vec<f32> {
        let w = self.cfg.window;
        let hop = self.cfg.hop;
        let len = self.cfg.padded_len(spec.n_frames());
        let mut acc = vec![0.0f64; len];
        let mut norm = vec![0.0f64; len];
        let mut buf = vec![Complex32::new(0.0, 0.0); w];
        let mut scratch = vec![Complex32::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let n_bins = spec.n_bins();
        for f in 0..spec.n_frames() {
            let frame = spec.frame(f);
            buf[..n_bins].copy_from_slice(frame);
            for k in n_bins..w {
                buf[k] = frame[w - k].conj();
            }
            // Real-signal spectra: DC and Nyquist must be real.
            buf[0].im = 0.0;
            if w % 2 == 0 {
                buf[w / 2].im = 0.0;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let base = f * hop;
            for (i, (b, &win)) in buf.iter().zip(&self.window).enumerate() {
                acc[base + i] += (b.re / w as f32 * win) as f64;
                norm[base + i] += (win * win) as f64;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(&a, &n)| if n > 1e-10 { (a / n) as f32 } else { 0.0 })
            .collect()
    }

    /// Crops a padded-domain signal back to `n_samples` original samples.
    pub fn unpad(&self, padded: &[f32], n_samples: usize) -> Vec<f32> {
        let pad = self.cfg.pad();
        (0..n_samples)
            .map(|i| padded.get(pad + i).copied().unwrap_or(0.0))
            .collect()
    }
}

/// One-shot STFT with the given configuration.
pub fn stft(audio: &AudioBuffer, cfg: StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg)?.analyze(audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, n: usize) -> AudioBuffer {
        AudioBuffer::mono16k(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn silence_gives_zero_spectrogram_with_50_frames() {
        let a = AudioBuffer::mono16k(vec![0.0; 16000]).unwrap();
        let s = stft(&a, StftConfig::default()).unwrap();
        assert_eq!(s.n_frames(), 50);
        assert_eq!(s.n_bins(), 641);
        assert!(s.magnitudes().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let s = stft(&sine(1000.0, 16000), StftConfig::default()).unwrap();
        let expected = (1000.0f64 * 1280.0 / 16000.0).round() as usize;
        for f in 2..s.n_frames() - 2 {
            let mags: Vec<f32> = s.frame(f).iter().map(|c| c.norm()).collect();
            let arg = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg, expected, "frame {f}");
        }
    }

    #[test]
    fn impulse_energy_confined_to_covering_frames() {
        let mut x = vec![0.0; 16000];
        x[8000] = 1.0;
        let cfg = StftConfig::default();
        let s = stft(&AudioBuffer::mono16k(x).unwrap(), cfg).unwrap();
        let win = hann(cfg.window);
        for f in 0..s.n_frames() {
            let (start, end) = cfg.frame_span(f);
            let covers = (start..end).contains(&8000);
            let weight = if covers { win[(8000 - start) as usize] } else { 0.0 };
            let energy: f32 = s.frame(f).iter().map(|c| c.norm_sqr()).sum();
            if weight == 0.0 {
                assert_eq!(energy, 0.0, "frame {f} should be silent");
            } else {
                assert!(energy > 0.0, "frame {f} covers the impulse");
            }
        }
    }

    #[test]
    fn empty_audio_rejected() {
        let a = AudioBuffer::mono16k(vec![]).unwrap();
        assert!(matches!(
            stft(&a, StftConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn bad_config_rejected() {
        assert!(Stft::new(StftConfig { window: 100, hop: 200 }).is_err());
    }

    #[test]
    fn synthesis_inverts_analysis_in_padded_domain() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let a = sine(330.0, 8000);
        let padded = stft.pad_signal(a.samples());
        let rec = stft.synthesize_padded(&stft.analyze_padded(&padded));
        // The outermost padded samples see a single near-zero window tap.
        let pad = stft.config().pad();
        for i in pad..padded.len() - pad {
            assert!((rec[i] - padded[i]).abs() < 1e-4, "sample {i}");
        }
        let cropped = stft.unpad(&rec, a.len());
        for (x, y) in cropped.iter().zip(a.samples()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn short_input_still_yields_one_frame() {
        let a = AudioBuffer::mono16k(vec![0.1; 100]).unwrap();
        let s = stft(&a, StftConfig::default()).unwrap();
        assert_eq!(s.n_frames(), 1);
    }
}
