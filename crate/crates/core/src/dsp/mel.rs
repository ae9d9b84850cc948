use std::io::{Read, Write};
use std::path::Path;

use super::audio::AudioBuffer;
use super::stft::{Spectrogram, Stft, StftConfig};
use crate::error::{Error, Result};

/// Power floor applied before the logarithm.
pub const LOG_FLOOR: f32 = 1e-5;

/// `ln(LOG_FLOOR)`, the value of a fully silent Mel cell.
pub fn log_floor() -> f32 {
    LOG_FLOOR.ln()
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - MIN_LOG_MEL) * logstep()).exp()
    }
}

/// Triangular, area-normalised Mel filterbank `[n_mels x n_fft_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    f_min_hz: f64,
    f_max_hz: f64,
    sample_rate_hz: u32,
    weights: Vec<f32>,
}

impl MelFilterbank {
    pub fn new(
        sample_rate_hz: u32,
        n_fft: usize,
        n_mels: usize,
        f_min_hz: f64,
        f_max_hz: f64,
    ) -> Result<Self> {
        if n_mels == 0 || n_fft < 2 || f_min_hz < 0.0 || f_max_hz <= f_min_hz {
            return Err(Error::InvalidInput(format!(
                "bad filterbank parameters: n_mels={n_mels} n_fft={n_fft} band=[{f_min_hz}, {f_max_hz}]"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate_hz as f64 / n_fft as f64)
            .collect();
        let (m_lo, m_hi) = (hz_to_mel(f_min_hz), hz_to_mel(f_max_hz));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0f32; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (c - lo);
                let down = (hi - f) / (hi - c);
                let w = up.min(down).max(0.0);
                weights[m * n_bins + k] = (w * norm) as f32;
            }
        }
        let fb = Self {
            n_mels,
            n_bins,
            f_min_hz,
            f_max_hz,
            sample_rate_hz,
            weights,
        };
        if let Some(m) = (0..n_mels).find(|&m| fb.row(m).iter().all(|&w| w <= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "mel filter {m} covers no FFT bin; use fewer mels or a longer FFT"
            )));
        }
        Ok(fb)
    }

    /// 80 bins over 0-8 kHz for the 1280-point FFT at 16 kHz.
    pub fn canonical() -> Self {
        Self::new(16_000, 1280, 80, 0.0, 8000.0).expect("canonical filterbank is valid")
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn f_min_hz(&self) -> f64 {
        self.f_min_hz
    }

    pub fn f_max_hz(&self) -> f64 {
        self.f_max_hz
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Centre frequency of filter `m`.
    pub fn center_hz(&self, m: usize) -> f64 {
        let (m_lo, m_hi) = (hz_to_mel(self.f_min_hz), hz_to_mel(self.f_max_hz));
        mel_to_hz(m_lo + (m_hi - m_lo) * (m + 1) as f64 / (self.n_mels + 1) as f64)
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / (2 * (self.n_bins - 1)) as f64
    }

    /// Mel energies of one power-spectrum frame.
    pub fn apply(&self, power: &[f32], out: &mut [f32]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .row(m)
                .iter()
                .zip(power)
                .map(|(&w, &p)| w as f64 * p as f64)
                .sum::<f64>() as f32;
        }
    }
}

/// Log-Mel matrix `[n_frames x n_mels]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    n_frames: usize,
    n_mels: usize,
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(n_frames: usize, n_mels: usize, values: Vec<f32>) -> Result<Self> {
        if n_frames == 0 || n_mels == 0 {
            return Err(Error::Shape("mel spectrogram needs at least one frame and bin".into()));
        }
        if values.len() != n_frames * n_mels {
            return Err(Error::Shape(format!(
                "{} values for {n_frames} x {n_mels} mel",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite mel value at index {i}")));
        }
        Ok(Self {
            n_frames,
            n_mels,
            values,
        })
    }

    /// Every cell at the log floor.
    pub fn floor(n_frames: usize, n_mels: usize) -> Self {
        Self {
            n_frames,
            n_mels,
            values: vec![log_floor(); n_frames * n_mels],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        &self.values[f * self.n_mels..(f + 1) * self.n_mels]
    }

    pub fn get(&self, f: usize, m: usize) -> f32 {
        self.values[f * self.n_mels + m]
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_frames {
            return Err(Error::Shape(format!(
                "frames [{start}, {}) outside 0..{}",
                start + len,
                self.n_frames
            )));
        }
        Ok(Self {
            n_frames: len,
            n_mels: self.n_mels,
            values: self.values[start * self.n_mels..(start + len) * self.n_mels].to_vec(),
        })
    }

    /// Extends to `n_frames` by repeating the floor value, or truncates.
    pub fn with_frames(&self, n_frames: usize) -> Self {
        let mut values = self.values.clone();
        values.resize(n_frames * self.n_mels, log_floor());
        Self {
            n_frames,
            n_mels: self.n_mels,
            values,
        }
    }

    /// Mean absolute difference.
    pub fn l1(&self, other: &Self) -> Result<f64> {
        if self.n_frames != other.n_frames || self.n_mels != other.n_mels {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_frames, self.n_mels, other.n_frames, other.n_mels
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.values.len() as f64)
    }

    /// CSV with one row per frame and no header.
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

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut values = Vec::new();
        let mut n_mels = None;
        let mut n_frames = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if *n_mels.get_or_insert(rec.len()) != rec.len() {
                return Err(Error::format(path, format!("ragged row {n_frames}")));
            }
            for field in rec.iter() {
                values.push(
                    field
                        .trim()
                        .parse::<f32>()
                        .map_err(|e| Error::format(path, format!("row {n_frames}: {e}")))?,
                );
            }
            n_frames += 1;
        }
        Self::new(n_frames, n_mels.unwrap_or(0), values)
    }

    /// Raw little-endian f32 with an 8-byte `(n_frames, n_mels)` u32 header.
    pub fn write_raw(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.n_frames as u32).to_le_bytes())?;
        w.write_all(&(self.n_mels as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|e| Error::InvalidInput(format!("raw mel header: {e}")))?;
        let n_frames = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        let n_mels = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; n_frames * n_mels * 4];
        r.read_exact(&mut payload)
            .map_err(|e| Error::InvalidInput(format!("raw mel payload: {e}")))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n_frames, n_mels, values)
    }
}

/// `log(max(fb * |spec|^2, floor))` per frame.
pub fn mel_project(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    if spec.n_bins() != fb.n_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.n_bins(),
            fb.n_bins()
        )));
    }
    let n_mels = fb.n_mels();
    let mut values = vec![0.0f32; spec.n_frames() * n_mels];
    let mut power = vec![0.0f32; spec.n_bins()];
    for f in 0..spec.n_frames() {
        for (p, c) in power.iter_mut().zip(spec.frame(f)) {
            *p = c.norm_sqr();
        }
        let row = &mut values[f * n_mels..(f + 1) * n_mels];
        fb.apply(&power, row);
        for v in row.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
    }
    MelSpectrogram::new(spec.n_frames(), n_mels, values)
}

/// Audio to log-Mel with a shared STFT engine and filterbank.
#[derive(Debug)]
pub struct MelAnalyzer {
    stft: Stft,
    fb: MelFilterbank,
}

impl MelAnalyzer {
    pub fn new(cfg: StftConfig, fb: MelFilterbank) -> Result<Self> {
        if cfg.n_bins() != fb.n_bins() {
            return Err(Error::Shape("filterbank does not match the FFT size".into()));
        }
        Ok(Self {
            stft: Stft::new(cfg)?,
            fb,
        })
    }

    pub fn canonical() -> Self {
        Self::new(StftConfig::default(), MelFilterbank::canonical()).expect("canonical analyzer")
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn mel(&self, audio: &AudioBuffer) -> Result<MelSpectrogram> {
        mel_project(&self.stft.analyze(audio)?, &self.fb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f32, n: usize, amp: f32) -> AudioBuffer {
        AudioBuffer::mono16k(
            (0..n)
                .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filterbank_rows_are_unimodal_and_non_negative() {
        let fb = MelFilterbank::canonical();
        assert_eq!(fb.n_mels(), 80);
        assert_eq!(fb.n_bins(), 641);
        for m in 0..80 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]), "row {m} rises");
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]), "row {m} falls");
        }
    }

    #[test]
    fn filterbank_covers_every_interior_bin() {
        let fb = MelFilterbank::canonical();
        for k in 1..fb.n_bins() - 1 {
            let total: f32 = (0..80).map(|m| fb.row(m)[k]).sum();
            assert!(total > 0.0, "bin {k} at {} Hz uncovered", fb.bin_hz(k));
        }
    }

    #[test]
    fn too_many_mels_for_fft_rejected() {
        assert!(MelFilterbank::new(16000, 64, 80, 0.0, 8000.0).is_err());
    }

    #[test]
    fn zero_spectrogram_hits_floor() {
        let spec = Spectrogram::zeros(5, 641);
        let mel = mel_project(&spec, &MelFilterbank::canonical()).unwrap();
        assert_eq!(mel.n_frames(), 5);
        assert!(mel.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let spec = Spectrogram::zeros(5, 300);
        assert!(matches!(
            mel_project(&spec, &MelFilterbank::canonical()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sine_peaks_at_nearest_mel_center() {
        let an = MelAnalyzer::canonical();
        let mel = an.mel(&sine(1000.0, 16000, 0.5)).unwrap();
        let fb = an.filterbank();
        let nearest = (0..80)
            .min_by(|&a, &b| {
                (fb.center_hz(a) - 1000.0)
                    .abs()
                    .partial_cmp(&(fb.center_hz(b) - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        for f in 2..mel.n_frames() - 2 {
            let row = mel.frame(f);
            let arg = (0..80)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(arg, nearest, "frame {f}");
        }
    }

    #[test]
    fn doubling_magnitude_adds_log_four() {
        let an = MelAnalyzer::canonical();
        let spec = an.stft().analyze(&sine(440.0, 8000, 0.2)).unwrap();
        let a = mel_project(&spec, an.filterbank()).unwrap();
        let b = mel_project(&spec.scaled(2.0), an.filterbank()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            if *x > LOG_FLOOR.ln() + 1.0 {
                assert!((y - x - 4f32.ln()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn framing_identity_between_stft_and_mel() {
        let an = MelAnalyzer::canonical();
        for n in [100, 320, 999, 16000, 17777] {
            let a = sine(200.0, n, 0.1);
            let s = an.stft().analyze(&a).unwrap();
            assert_eq!(an.mel(&a).unwrap().n_frames(), s.n_frames());
        }
    }

    #[test]
    fn raw_and_csv_round_trip() {
        let mel = MelAnalyzer::canonical().mel(&sine(300.0, 3200, 0.3)).unwrap();
        let mut buf = Vec::new();
        mel.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + mel.values().len() * 4);
        assert_eq!(&buf[..4], &(mel.n_frames() as u32).to_le_bytes());
        assert_eq!(&buf[4..8], &80u32.to_le_bytes());
        assert_eq!(MelSpectrogram::read_raw(&buf[..]).unwrap(), mel);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        mel.write_csv(&p).unwrap();
        let back = MelSpectrogram::read_csv(&p).unwrap();
        assert_eq!(back, mel);
    }

    #[test]
    fn truncated_raw_rejected() {
        let mel = MelSpectrogram::floor(3, 80);
        let mut buf = Vec::new();
        mel.write_raw(&mut buf).unwrap();
        assert!(MelSpectrogram::read_raw(&buf[..buf.len() - 2]).is_err());
    }
}
