use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pitch hop in samples: a quarter of the Mel hop.
pub const PITCH_HOP: usize = 80;
/// Contour frames per Mel frame.
pub const PITCH_RATE_FACTOR: usize = 4;
/// Lower bound applied to per-utterance F0 standard deviation.
pub const STD_FLOOR_HZ: f64 = 1.0;

/// Search band of the tracker; also the clamp range for denormalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchBand {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for PitchBand {
    fn default() -> Self {
        Self {
            f_min_hz: 60.0,
            f_max_hz: 400.0,
        }
    }
}

/// F0 track with voicing flags; unvoiced frames carry exactly 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    f0_hz: Vec<f64>,
    voiced: Vec<bool>,
    hop_samples: usize,
}

impl PitchContour {
    /// Builds a contour from F0 values; 0 marks an unvoiced frame.
    pub fn from_f0(f0_hz: Vec<f64>) -> Result<Self> {
        if let Some(i) = f0_hz.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!("bad F0 {} at frame {i}", f0_hz[i])));
        }
        let voiced = f0_hz.iter().map(|&v| v > 0.0).collect();
        Ok(Self {
            f0_hz,
            voiced,
            hop_samples: PITCH_HOP,
        })
    }

    pub fn new(f0_hz: Vec<f64>, voiced: Vec<bool>) -> Result<Self> {
        if f0_hz.len() != voiced.len() {
            return Err(Error::Shape(format!(
                "{} F0 values vs {} voicing flags",
                f0_hz.len(),
                voiced.len()
            )));
        }
        for (i, (&f, &v)) in f0_hz.iter().zip(&voiced).enumerate() {
            if v != (f > 0.0) || !f.is_finite() || f < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "frame {i}: F0 {f} inconsistent with voiced={v}"
                )));
            }
        }
        Ok(Self {
            f0_hz,
            voiced,
            hop_samples: PITCH_HOP,
        })
    }

    pub fn unvoiced(n: usize) -> Self {
        Self {
            f0_hz: vec![0.0; n],
            voiced: vec![false; n],
            hop_samples: PITCH_HOP,
        }
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn f0_hz(&self) -> &[f64] {
        &self.f0_hz
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn hop_samples(&self) -> usize {
        self.hop_samples
    }

    pub fn n_voiced(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
    }

    pub fn voiced_median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced_values().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        })
    }

    pub fn voiced_mean(&self) -> Option<f64> {
        let n = self.n_voiced();
        (n > 0).then(|| self.voiced_values().sum::<f64>() / n as f64)
    }

    /// Pads with unvoiced frames or truncates to `n` frames.
    pub fn with_len(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.f0_hz.resize(n, 0.0);
        c.voiced.resize(n, false);
        c
    }

    /// Length forced to `PITCH_RATE_FACTOR * n_mel_frames`.
    pub fn aligned_to_mel(&self, n_mel_frames: usize) -> Self {
        self.with_len(PITCH_RATE_FACTOR * n_mel_frames)
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Shape(format!(
                "frames [{start}, {}) outside 0..{}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            f0_hz: self.f0_hz[start..start + len].to_vec(),
            voiced: self.voiced[start..start + len].to_vec(),
            hop_samples: self.hop_samples,
        })
    }

    /// Sets frames unvoiced wherever `mask` is false.
    pub fn masked_by(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::Shape(format!(
                "mask of {} for contour of {}",
                mask.len(),
                self.len()
            )));
        }
        let f0_hz: Vec<f64> = self
            .f0_hz
            .iter()
            .zip(mask)
            .map(|(&f, &m)| if m { f } else { 0.0 })
            .collect();
        Self::from_f0(f0_hz)
    }

    /// Voiced-frame RMSE in Hz against `reference` over frames voiced in both.
    pub fn rmse_hz(&self, reference: &PitchContour) -> Result<f64> {
        if reference.len() != self.len() {
            return Err(Error::Shape("contour lengths differ".into()));
        }
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..self.len() {
            if self.voiced[i] && reference.voiced[i] {
                sum += (self.f0_hz[i] - reference.f0_hz[i]).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::NoVoicedFrames);
        }
        Ok((sum / n as f64).sqrt())
    }

    /// CSV with header `frame_index,f0_hz,voiced`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let werr = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["frame_index", "f0_hz", "voiced"]).map_err(werr)?;
        for (i, (&f, &v)) in self.f0_hz.iter().zip(&self.voiced).enumerate() {
            w.write_record([i.to_string(), f.to_string(), (v as u8).to_string()])
                .map_err(werr)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut f0 = Vec::new();
        let mut voiced = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = || Error::format(path, format!("bad row {i}"));
            if rec.len() != 3 || rec[0].parse::<usize>().map_err(|_| bad())? != i {
                return Err(bad());
            }
            f0.push(rec[1].parse::<f64>().map_err(|_| bad())?);
            voiced.push(match &rec[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            });
        }
        Self::new(f0, voiced)
    }
}

/// Per-utterance voiced-frame statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean_hz: f64,
    pub std_hz: f64,
}

impl PitchStats {
    pub fn new(mean_hz: f64, std_hz: f64) -> Result<Self> {
        if !(mean_hz.is_finite() && mean_hz > 0.0 && std_hz.is_finite() && std_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid pitch stats ({mean_hz}, {std_hz})"
            )));
        }
        Ok(Self { mean_hz, std_hz })
    }
}

/// Mean and (population) standard deviation over voiced frames, with the
/// standard deviation floored at 1 Hz.
pub fn compute_stats(contour: &PitchContour) -> Result<PitchStats> {
    let n = contour.n_voiced();
    if n == 0 {
        return Err(Error::NoVoicedFrames);
    }
    let mean = contour.voiced_values().sum::<f64>() / n as f64;
    let var = contour
        .voiced_values()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(PitchStats {
        mean_hz: mean,
        std_hz: var.sqrt().max(STD_FLOOR_HZ),
    })
}

/// Z-scored F0 with voicing; unvoiced frames hold exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedContour {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl NormalizedContour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start..start + len].to_vec(),
            voiced: self.voiced[start..start + len].to_vec(),
        }
    }
}

pub fn normalize_f0(contour: &PitchContour, stats: &PitchStats) -> NormalizedContour {
    let values = contour
        .f0_hz()
        .iter()
        .zip(contour.voiced())
        .map(|(&f, &v)| {
            if v {
                (f - stats.mean_hz) / stats.std_hz
            } else {
                0.0
            }
        })
        .collect();
    NormalizedContour {
        values,
        voiced: contour.voiced().to_vec(),
    }
}

/// `ln(f0 + 1)` per frame; unvoiced frames map to 0.
pub fn log1p_f0(contour: &PitchContour) -> Vec<f64> {
    contour
        .f0_hz()
        .iter()
        .map(|&f| f.ln_1p())
        .collect()
}

/// Affine transport of z-scores onto target statistics, clamped to `band`.
pub fn denormalize_f0(
    norm: &NormalizedContour,
    target: &PitchStats,
    band: PitchBand,
) -> Result<PitchContour> {
    if norm.values.len() != norm.voiced.len() {
        return Err(Error::Shape("normalized contour values/voicing differ".into()));
    }
    let f0 = norm
        .values
        .iter()
        .zip(&norm.voiced)
        .map(|(&z, &v)| {
            if v {
                (z * target.std_hz + target.mean_hz).clamp(band.f_min_hz, band.f_max_hz)
            } else {
                0.0
            }
        })
        .collect();
    PitchContour::new(f0, norm.voiced.clone())
}
