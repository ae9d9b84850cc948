//! NCCF candidate search with Viterbi smoothing.
//!
//! For every 80-sample hop the normalised cross-correlation of a 320-sample
//! window against its lagged copy is evaluated over the lag range of the
//! search band. The strongest local maxima (slightly biased towards short
//! lags to avoid sub-harmonics) become voiced candidates, refined by
//! parabolic interpolation. A dynamic programme then picks one state per
//! frame among the candidates and an unvoiced state, penalising octave
//! distance between consecutive voiced picks and voicing switches.

use serde::{Deserialize, Serialize};

use super::contour::{PitchBand, PitchContour, PITCH_HOP};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub hop: usize,
    /// Correlation window length in samples.
    pub window: usize,
    pub n_candidates: usize,
    /// Frames whose best NCCF peak is below this are forced unvoiced.
    pub nccf_threshold: f64,
    pub octave_cost: f64,
    pub voicing_switch_cost: f64,
    /// Frames quieter than this (dB relative to the loudest frame) are forced unvoiced.
    pub energy_floor_db: f64,
    /// Linear penalty on normalised lag used when ranking candidates.
    pub lag_weight: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            f_min_hz: 60.0,
            f_max_hz: 400.0,
            hop: PITCH_HOP,
            window: 320,
            n_candidates: 5,
            nccf_threshold: 0.3,
            octave_cost: 4.0,
            voicing_switch_cost: 0.2,
            energy_floor_db: -40.0,
            lag_weight: 0.05,
        }
    }
}

impl TrackerConfig {
    pub fn band(&self) -> PitchBand {
        PitchBand {
            f_min_hz: self.f_min_hz,
            f_max_hz: self.f_max_hz,
        }
    }

    fn lag_range(&self, rate: f64) -> (usize, usize) {
        (
            (rate / self.f_max_hz).floor().max(2.0) as usize,
            (rate / self.f_min_hz).ceil() as usize,
        )
    }

    /// Samples needed for one analysis: window plus maximum lag.
    pub fn min_samples(&self, rate: u32) -> usize {
        self.window + self.lag_range(rate as f64).1 + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    f0_hz: f64,
    strength: f64,
}

/// Parabolic peak refinement: (offset in (-0.5, 0.5), interpolated value).
fn parabolic(ym: f64, y0: f64, yp: f64) -> (f64, f64) {
    let denom = ym - 2.0 * y0 + yp;
    if denom >= 0.0 {
        return (0.0, y0);
    }
    let off = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
    (off, y0 - 0.25 * (ym - yp) * off)
}

struct FrameAnalysis {
    candidates: Vec<Candidate>,
    peak: f64,
    energy: f64,
}

fn analyze_frame(
    x: &[f32],
    center: usize,
    cfg: &TrackerConfig,
    lags: (usize, usize),
    rate: f64,
) -> FrameAnalysis {
    let n = cfg.window;
    let (lag_lo, lag_hi) = lags;
    let start = center as isize - (n / 2) as isize;
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < x.len() {
            x[i as usize] as f64
        } else {
            0.0
        }
    };
    let seg: Vec<f64> = (0..(n + lag_hi + 2) as isize).map(|i| at(start + i)).collect();
    let e0: f64 = seg[..n].iter().map(|v| v * v).sum();
    if e0 <= 0.0 {
        return FrameAnalysis {
            candidates: Vec::new(),
            peak: 0.0,
            energy: 0.0,
        };
    }
    // Running energy of the lagged window.
    let lo = lag_lo - 1;
    let hi = lag_hi + 1;
    let mut ek: f64 = seg[lo..lo + n].iter().map(|v| v * v).sum();
    let mut r = vec![0.0f64; hi + 1];
    for k in lo..=hi {
        if k > lo {
            ek += seg[k + n - 1] * seg[k + n - 1] - seg[k - 1] * seg[k - 1];
        }
        let num: f64 = seg[..n].iter().zip(&seg[k..k + n]).map(|(a, b)| a * b).sum();
        let den = (e0 * ek.max(0.0)).sqrt();
        r[k] = if den > 0.0 { num / den } else { 0.0 };
    }
    let mut cands: Vec<(f64, Candidate)> = Vec::new();
    let mut peak = 0.0f64;
    for k in lag_lo..=lag_hi {
        if r[k] > 0.0 && r[k] >= r[k - 1] && r[k] > r[k + 1] {
            let (off, val) = parabolic(r[k - 1], r[k], r[k + 1]);
            let val = val.min(1.0);
            let lag = k as f64 + off;
            peak = peak.max(val);
            let rank = val * (1.0 - cfg.lag_weight * (k - lag_lo) as f64 / (lag_hi - lag_lo).max(1) as f64);
            cands.push((
                rank,
                Candidate {
                    f0_hz: rate / lag,
                    strength: val,
                },
            ));
        }
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    cands.truncate(cfg.n_candidates);
    FrameAnalysis {
        candidates: cands.into_iter().map(|(_, c)| c).collect(),
        peak,
        energy: e0 / n as f64,
    }
}

/// Tracks F0 every `cfg.hop` samples; frame `i` is centred on
/// `i * hop + hop / 2` and there are `max(1, len / hop)` frames.
pub fn track_pitch(audio: &AudioBuffer, cfg: &TrackerConfig) -> Result<PitchContour> {
    if !(cfg.f_min_hz > 0.0 && cfg.f_min_hz < cfg.f_max_hz) {
        return Err(Error::InvalidInput(format!(
            "pitch band [{}, {}] is empty",
            cfg.f_min_hz, cfg.f_max_hz
        )));
    }
    if cfg.hop == 0 || cfg.window == 0 || cfg.n_candidates == 0 {
        return Err(Error::InvalidInput("tracker hop, window and candidates must be positive".into()));
    }
    let rate = audio.sample_rate_hz() as f64;
    let lags = cfg.lag_range(rate);
    if lags.1 <= lags.0 {
        return Err(Error::InvalidInput("pitch band maps to an empty lag range".into()));
    }
    let needed = cfg.min_samples(audio.sample_rate_hz());
    if audio.len() < needed {
        return Err(Error::InvalidInput(format!(
            "audio has {} samples, one analysis window needs {needed}",
            audio.len()
        )));
    }
    let x = audio.samples();
    let n_frames = (x.len() / cfg.hop).max(1);
    let frames: Vec<FrameAnalysis> = (0..n_frames)
        .map(|i| analyze_frame(x, i * cfg.hop + cfg.hop / 2, cfg, lags, rate))
        .collect();
    let max_energy = frames.iter().map(|f| f.energy).fold(0.0, f64::max);
    let energy_floor = max_energy * 10f64.powf(cfg.energy_floor_db / 10.0);

    // States per frame: voiced candidates followed by the unvoiced state.
    let states: Vec<Vec<Candidate>> = frames
        .iter()
        .map(|f| {
            if f.peak < cfg.nccf_threshold || f.energy <= energy_floor || f.energy == 0.0 {
                Vec::new()
            } else {
                f.candidates
                    .iter()
                    .copied()
                    .filter(|c| c.f0_hz >= cfg.f_min_hz && c.f0_hz <= cfg.f_max_hz)
                    .collect()
            }
        })
        .collect();
    let local = |i: usize, s: usize| -> f64 {
        if s < states[i].len() {
            1.0 - states[i][s].strength
        } else {
            frames[i].peak
        }
    };
    let transition = |prev: Option<&Candidate>, next: Option<&Candidate>| -> f64 {
        match (prev, next) {
            (Some(a), Some(b)) => cfg.octave_cost * (b.f0_hz / a.f0_hz).log2().abs(),
            (None, None) => 0.0,
            _ => cfg.voicing_switch_cost,
        }
    };

    let mut cost: Vec<f64> = (0..=states[0].len()).map(|s| local(0, s)).collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; cost.len()]];
    for i in 1..n_frames {
        let n_states = states[i].len() + 1;
        let mut next = vec![f64::INFINITY; n_states];
        let mut ptr = vec![0usize; n_states];
        for s in 0..n_states {
            let cur = states[i].get(s);
            for (p, &c) in cost.iter().enumerate() {
                let v = c + transition(states[i - 1].get(p), cur);
                if v < next[s] {
                    next[s] = v;
                    ptr[s] = p;
                }
            }
            next[s] += local(i, s);
        }
        cost = next;
        back.push(ptr);
    }
    let mut s = cost
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut f0 = vec![0.0f64; n_frames];
    for i in (0..n_frames).rev() {
        if let Some(c) = states[i].get(s) {
            f0[i] = c.f0_hz;
        }
        s = back[i][s];
    }
    PitchContour::from_f0(f0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(f0_at: impl Fn(f64) -> f64, n: usize, amp: f64) -> AudioBuffer {
        let mut phase = 0.0f64;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                let f = f0_at(t);
                let v = if f > 0.0 { amp * phase.sin() } else { 0.0 };
                phase += 2.0 * std::f64::consts::PI * f / 16000.0;
                v as f32
            })
            .collect();
        AudioBuffer::mono16k(samples).unwrap()
    }

    fn center_time(i: usize) -> f64 {
        (i * 80 + 40) as f64 / 16000.0
    }

    #[test]
    fn steady_tone_is_voiced_at_its_frequency() {
        let c = track_pitch(&synth(|_| 220.0, 16000, 0.5), &TrackerConfig::default()).unwrap();
        assert_eq!(c.len(), 200);
        for i in 5..195 {
            assert!(c.voiced()[i], "frame {i}");
        }
        assert!((c.voiced_median().unwrap() - 220.0).abs() <= 3.0);
    }

    #[test]
    fn digital_silence_is_unvoiced() {
        let a = AudioBuffer::mono16k(vec![0.0; 8000]).unwrap();
        let c = track_pitch(&a, &TrackerConfig::default()).unwrap();
        assert!(c.f0_hz().iter().all(|&f| f == 0.0));
        assert_eq!(c.n_voiced(), 0);
    }

    #[test]
    fn glide_follows_schedule_without_octave_jumps() {
        let sched = |t: f64| 150.0 + 150.0 * t;
        let c = track_pitch(&synth(sched, 16000, 0.5), &TrackerConfig::default()).unwrap();
        for i in 5..195 {
            assert!(c.voiced()[i]);
            let err = (c.f0_hz()[i] - sched(center_time(i))).abs();
            assert!(err <= 5.0, "frame {i}: error {err}");
        }
        for w in c.f0_hz().windows(2) {
            if w[0] > 0.0 && w[1] > 0.0 {
                assert!((w[1] / w[0]).log2().abs() <= 0.6);
            }
        }
    }

    #[test]
    fn too_short_audio_rejected() {
        let a = AudioBuffer::mono16k(vec![0.1; 300]).unwrap();
        assert!(matches!(
            track_pitch(&a, &TrackerConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn empty_band_rejected() {
        let a = AudioBuffer::mono16k(vec![0.1; 3000]).unwrap();
        let cfg = TrackerConfig {
            f_min_hz: 300.0,
            f_max_hz: 200.0,
            ..TrackerConfig::default()
        };
        assert!(track_pitch(&a, &cfg).is_err());
    }

    #[test]
    fn parabolic_recovers_vertex() {
        // y = 1 - (x - 0.3)^2 sampled at -1, 0, 1
        let f = |x: f64| 1.0 - (x - 0.3) * (x - 0.3);
        let (off, v) = parabolic(f(-1.0), f(0.0), f(1.0));
        assert!((off - 0.3).abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }
}
