//! Synthetic speakers and the analysed utterance bundle.
//!
//! Each utterance is a band-limited sawtooth following a slowly wandering F0
//! with vibrato, shaped by three vowel formants scaled to the speaker, a
//! one-pole spectral tilt, and separated by silences and fricative noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{content_features, AudioBuffer, ContentFeatures, MelAnalyzer, MelSpectrogram, DEFAULT_CONTENT_DIM, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::pitch::{track_pitch, PitchContour, TrackerConfig, PITCH_HOP, PITCH_RATE_FACTOR};

/// Formants of a neutral vowel; speaker patterns are expressed against it.
pub const NEUTRAL_FORMANTS: [f64; 3] = [500.0, 1500.0, 2500.0];

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 140.0];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.6, 0.35];
const BASES_HZ: [f64; 8] = [95.0, 120.0, 140.0, 165.0, 190.0, 215.0, 240.0, 270.0];
const VIBRATO_DEPTH: f64 = 0.01;
/// Peak level. Keeps 16-bit write and read an exact round trip.
const PEAK: f64 = 0.45;
const FRAME: usize = 320;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: String,
    pub f0_base_hz: f64,
    /// Bound on the slow F0 wander around the base.
    pub f0_range_hz: f64,
    pub vibrato_rate_hz: f64,
    /// Extra tilt on top of the sawtooth's own roll-off, in dB per octave
    /// (negative darkens).
    pub spectral_tilt_db_per_oct: f64,
    /// This speaker's neutral-vowel formant centres in Hz.
    pub formant_pattern: [f64; 3],
}

impl SyntheticSpeaker {
    /// A panel of `n` speakers. The first eight use fixed bases from 95 to
    /// 270 Hz (120 and 240 included); the rest draw a base in that range.
    pub fn panel(n: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5be4_a7e1);
        (0..n)
            .map(|i| {
                let base = BASES_HZ.get(i).copied().unwrap_or_else(|| rng.gen_range(95.0..270.0));
                // Higher voices get shorter vocal tracts, as in real speakers.
                let scale = (base / 160.0).powf(0.3);
                let mut formant_pattern = [0.0; 3];
                for (k, f) in formant_pattern.iter_mut().enumerate() {
                    *f = NEUTRAL_FORMANTS[k] * scale * rng.gen_range(0.95..1.05);
                }
                Self {
                    id: format!("spk{i:02}"),
                    f0_base_hz: base,
                    f0_range_hz: 0.08 * base,
                    vibrato_rate_hz: rng.gen_range(4.5..6.5),
                    spectral_tilt_db_per_oct: rng.gen_range(-4.5..-0.5),
                    formant_pattern,
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let band = TrackerConfig::default().band();
        let lo = self.f0_base_hz - self.f0_range_hz;
        let hi = self.f0_base_hz + self.f0_range_hz;
        if !(lo >= band.f_min_hz && hi <= band.f_max_hz) {
            return Err(Error::InvalidInput(format!(
                "speaker {} spans {lo:.1}-{hi:.1} Hz, outside the tracker band",
                self.id
            )));
        }
        if self.formant_pattern.iter().any(|&f| !(f > 100.0 && f < 3500.0)) {
            return Err(Error::InvalidInput(format!("speaker {} has implausible formants", self.id)));
        }
        if !(self.spectral_tilt_db_per_oct <= 0.0 && self.spectral_tilt_db_per_oct > -6.0) {
            return Err(Error::InvalidInput(format!(
                "speaker {} tilt must lie in (-6, 0] dB/oct",
                self.id
            )));
        }
        Ok(())
    }

    fn vowel_formants(&self, v: usize) -> [f64; 3] {
        let mut f = [0.0; 3];
        for k in 0..3 {
            f[k] = (VOWELS[v][k] * self.formant_pattern[k] / NEUTRAL_FORMANTS[k]).min(7000.0);
        }
        f
    }
}

/// Analysis bundle of one utterance: contour at four times the Mel frame
/// rate, content features at the Mel frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub name: String,
    pub speaker_id: String,
    pub audio: AudioBuffer,
    pub mel: MelSpectrogram,
    pub contour: PitchContour,
    pub content: ContentFeatures,
    /// Mean of the generating F0 over voiced frames, when synthetic.
    pub trajectory_mean_hz: Option<f64>,
}

impl Utterance {
    /// Runs the canonical analysis on 16 kHz audio.
    pub fn analyze(
        name: impl Into<String>,
        speaker_id: impl Into<String>,
        audio: AudioBuffer,
        tracker: &TrackerConfig,
        content_dim: usize,
    ) -> Result<Self> {
        audio.require_canonical()?;
        let mel = MelAnalyzer::canonical().mel(&audio)?;
        let contour = track_pitch(&audio, tracker)?.aligned_to_mel(mel.n_frames());
        let content = content_features(&audio, content_dim)?;
        Ok(Self {
            name: name.into(),
            speaker_id: speaker_id.into(),
            audio,
            mel,
            contour,
            content,
            trajectory_mean_hz: None,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.mel.n_frames()
    }

    pub fn check_alignment(&self) -> Result<()> {
        let f = self.mel.n_frames();
        if self.contour.len() != PITCH_RATE_FACTOR * f || self.content.n_frames() != f {
            return Err(Error::Shape(format!(
                "{}: {} Mel frames, {} contour samples, {} content frames",
                self.name,
                f,
                self.contour.len(),
                self.content.n_frames()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub utterances_per: usize,
    pub seed: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub content_dim: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 8,
            utterances_per: 40,
            seed: 0,
            min_duration_s: 1.0,
            max_duration_s: 3.0,
            content_dim: DEFAULT_CONTENT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SyntheticSpeaker>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speaker(&self, id: &str) -> Option<&SyntheticSpeaker> {
        self.speakers.iter().find(|s| s.id == id)
    }

    /// Indices of every utterance by `speaker_id`, in corpus order.
    pub fn by_speaker(&self, speaker_id: &str) -> Vec<usize> {
        (0..self.utterances.len())
            .filter(|&i| self.utterances[i].speaker_id == speaker_id)
            .collect()
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.utterances.iter().map(|u| u.speaker_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Splits off the last `per_speaker` utterances of every speaker.
    pub fn split(&self, per_speaker: usize) -> (Corpus, Corpus) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for id in self.speaker_ids() {
            let idx = self.by_speaker(&id);
            let cut = idx.len().saturating_sub(per_speaker).max(1.min(idx.len()));
            for (k, &i) in idx.iter().enumerate() {
                let u = self.utterances[i].clone();
                if k < cut {
                    train.push(u)
                } else {
                    held.push(u)
                }
            }
        }
        let sub = |utterances| Corpus {
            speakers: self.speakers.clone(),
            utterances,
        };
        (sub(train), sub(held))
    }

    /// Writes `speakers.csv`, `utterances.csv` and per utterance a WAV plus
    /// an F0 sidecar.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("speakers.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        for s in &self.speakers {
            w.serialize(SpeakerRow::from(s)).map_err(|e| Error::format(&path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("utterances.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        for u in &self.utterances {
            w.serialize(UtteranceRow {
                name: u.name.clone(),
                speaker_id: u.speaker_id.clone(),
                trajectory_mean_hz: u.trajectory_mean_hz,
            })
            .map_err(|e| Error::format(&path, e.to_string()))?;
            u.audio.write_wav(dir.join(format!("{}.wav", u.name)))?;
            u.contour.write_csv(dir.join(format!("{}.f0.csv", u.name)))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Reads a corpus written by [`Corpus::save`]; Mel and content features
    /// are recomputed from the audio.
    pub fn load(dir: impl AsRef<Path>, content_dim: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("speakers.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        let speakers = r
            .deserialize::<SpeakerRow>()
            .map(|row| row.map(SyntheticSpeaker::from).map_err(|e| Error::format(&path, e.to_string())))
            .collect::<Result<Vec<_>>>()?;

        let path = dir.join("utterances.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut utterances = Vec::new();
        for row in r.deserialize::<UtteranceRow>() {
            let row = row.map_err(|e| Error::format(&path, e.to_string()))?;
            let audio = AudioBuffer::read_wav(dir.join(format!("{}.wav", row.name)))?;
            audio.require_canonical()?;
            let mel = MelAnalyzer::canonical().mel(&audio)?;
            let contour = PitchContour::read_csv(dir.join(format!("{}.f0.csv", row.name)))?;
            let content = content_features(&audio, content_dim)?;
            let u = Utterance {
                name: row.name,
                speaker_id: row.speaker_id,
                audio,
                mel,
                contour,
                content,
                trajectory_mean_hz: row.trajectory_mean_hz,
            };
            u.check_alignment()?;
            utterances.push(u);
        }
        if utterances.is_empty() {
            return Err(Error::format(path, "corpus lists no utterances"));
        }
        Ok(Self { speakers, utterances })
    }
}

#[derive(Serialize, Deserialize)]
struct SpeakerRow {
    id: String,
    f0_base_hz: f64,
    f0_range_hz: f64,
    vibrato_rate_hz: f64,
    spectral_tilt_db_per_oct: f64,
    f1_hz: f64,
    f2_hz: f64,
    f3_hz: f64,
}

impl From<&SyntheticSpeaker> for SpeakerRow {
    fn from(s: &SyntheticSpeaker) -> Self {
        let [f1_hz, f2_hz, f3_hz] = s.formant_pattern;
        Self {
            id: s.id.clone(),
            f0_base_hz: s.f0_base_hz,
            f0_range_hz: s.f0_range_hz,
            vibrato_rate_hz: s.vibrato_rate_hz,
            spectral_tilt_db_per_oct: s.spectral_tilt_db_per_oct,
            f1_hz,
            f2_hz,
            f3_hz,
        }
    }
}

impl From<SpeakerRow> for SyntheticSpeaker {
    fn from(r: SpeakerRow) -> Self {
        Self {
            id: r.id,
            f0_base_hz: r.f0_base_hz,
            f0_range_hz: r.f0_range_hz,
            vibrato_rate_hz: r.vibrato_rate_hz,
            spectral_tilt_db_per_oct: r.spectral_tilt_db_per_oct,
            formant_pattern: [r.f1_hz, r.f2_hz, r.f3_hz],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct UtteranceRow {
    name: String,
    speaker_id: String,
    trajectory_mean_hz: Option<f64>,
}

/// `speakers` synthetic speakers with `utterances_per` utterances each.
pub fn generate_corpus(speakers: usize, utterances_per: usize, seed: u64) -> Result<Corpus> {
    generate_corpus_with(&CorpusConfig {
        speakers,
        utterances_per,
        seed,
        ..CorpusConfig::default()
    })
}

pub fn generate_corpus_with(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.speakers == 0 || cfg.utterances_per == 0 {
        return Err(Error::InvalidInput("corpus needs at least one speaker and one utterance".into()));
    }
    if !(cfg.min_duration_s >= 0.5 && cfg.min_duration_s <= cfg.max_duration_s) {
        return Err(Error::InvalidInput(format!(
            "durations [{}, {}] s are not a valid range of at least 0.5 s",
            cfg.min_duration_s, cfg.max_duration_s
        )));
    }
    let speakers = SyntheticSpeaker::panel(cfg.speakers, cfg.seed);
    generate_for(&speakers, cfg)
}

/// Utterances for an explicit speaker list.
pub fn generate_for(speakers: &[SyntheticSpeaker], cfg: &CorpusConfig) -> Result<Corpus> {
    let tracker = TrackerConfig::default();
    let mut utterances = Vec::with_capacity(speakers.len() * cfg.utterances_per);
    for (si, spk) in speakers.iter().enumerate() {
        spk.validate()?;
        for k in 0..cfg.utterances_per {
            let seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((si as u64) << 32) ^ k as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dur = rng.gen_range(cfg.min_duration_s..=cfg.max_duration_s);
            let n = ((dur * SAMPLE_RATE as f64) as usize / FRAME).max(1) * FRAME;
            let synth = synthesize(spk, n, &mut rng);
            let audio = AudioBuffer::mono16k(synth.samples)?;
            let mut u = Utterance::analyze(format!("{}_u{k:03}", spk.id), spk.id.clone(), audio, &tracker, cfg.content_dim)?;
            u.trajectory_mean_hz = synth.trajectory_mean_hz;
            utterances.push(u);
        }
    }
    Ok(Corpus {
        speakers: speakers.to_vec(),
        utterances,
    })
}

struct Synth {
    samples: Vec<f32>,
    trajectory_mean_hz: Option<f64>,
}

#[derive(Clone, Copy)]
enum Segment {
    Silence,
    Fricative,
    Vowel(usize),
}

fn poly_blep(t: f64, dt: f64) -> f64 {
    if t < dt {
        let x = t / dt;
        2.0 * x - x * x - 1.0
    } else if t > 1.0 - dt {
        let x = (t - 1.0) / dt;
        x * x + 2.0 * x + 1.0
    } else {
        0.0
    }
}

/// Constant-peak-gain band-pass biquad.
#[derive(Clone, Copy, Default)]
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, f_hz: f64, bw_hz: f64) {
        let w = 2.0 * PI * f_hz / SAMPLE_RATE as f64;
        let alpha = w.sin() * bw_hz / (2.0 * f_hz);
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.a1 = -2.0 * w.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn one_pole_gain(a: f64, f_hz: f64) -> f64 {
    let w = 2.0 * PI * f_hz / SAMPLE_RATE as f64;
    (1.0 - a) / (1.0 - 2.0 * a * w.cos() + a * a).sqrt()
}

/// Pole of a one-pole low-pass whose gain falls by `3 |tilt|` dB between
/// 500 Hz and 4 kHz.
pub(crate) fn tilt_pole(tilt_db_per_oct: f64) -> f64 {
    let target = -3.0 * tilt_db_per_oct;
    let drop = |a: f64| 20.0 * (one_pole_gain(a, 500.0) / one_pole_gain(a, 4000.0)).log10();
    let (mut lo, mut hi) = (0.0, 0.999);
    if target <= 0.0 {
        return 0.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if drop(mid) < target {
            lo = mid
        } else {
            hi = mid
        }
    }
    0.5 * (lo + hi)
}

fn plan(n: usize, rng: &mut ChaCha8Rng) -> Vec<(Segment, usize)> {
    let ms = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo..hi) * 16.0) as usize;
    let mut segs = vec![(Segment::Silence, ms(rng, 80.0, 200.0))];
    let tail = ms(rng, 80.0, 200.0);
    let mut used = segs[0].1;
    while used + tail < n {
        let len = ms(rng, 150.0, 400.0).min(n - tail - used);
        segs.push((Segment::Vowel(rng.gen_range(0..VOWELS.len())), len));
        used += len;
        if used + tail >= n {
            break;
        }
        let gap = ms(rng, 40.0, 150.0).min(n - tail - used);
        let kind = if rng.gen_bool(0.5) { Segment::Fricative } else { Segment::Silence };
        segs.push((kind, gap));
        used += gap;
    }
    segs.push((Segment::Silence, n - used));
    segs
}

fn synthesize(spk: &SyntheticSpeaker, n: usize, rng: &mut ChaCha8Rng) -> Synth {
    let fs = SAMPLE_RATE as f64;
    let segs = plan(n, rng);

    // Slow wander: AR(1) per pitch hop with stationary spread range / 2.
    let hops = n / PITCH_HOP + 1;
    let rho: f64 = 0.97;
    let innov = 0.5 * spk.f0_range_hz * (1.0 - rho * rho).sqrt();
    let mut walk = Vec::with_capacity(hops);
    let mut w = rng.gen_range(-0.5..0.5) * spk.f0_range_hz;
    for _ in 0..hops {
        walk.push(w);
        let e: f64 = rng.sample(StandardNormal);
        w = (rho * w + innov * e).clamp(-spk.f0_range_hz, spk.f0_range_hz);
    }
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let f0_at = |i: usize| {
        let h = i as f64 / PITCH_HOP as f64;
        let k = (h.floor() as usize).min(hops - 2);
        let frac = h - k as f64;
        let wander = walk[k] * (1.0 - frac) + walk[k + 1] * frac;
        let vib = VIBRATO_DEPTH * spk.f0_base_hz * (2.0 * PI * spk.vibrato_rate_hz * i as f64 / fs + vib_phase).sin();
        (spk.f0_base_hz + wander + vib).clamp(spk.f0_base_hz - spk.f0_range_hz, spk.f0_base_hz + spk.f0_range_hz)
    };

    let pole = tilt_pole(spk.spectral_tilt_db_per_oct);
    let mut res = [Resonator::default(); 3];
    let mut fric = Resonator::default();
    let mut lp = 0.0;
    let mut phase = rng.gen::<f64>();
    let mut out = vec![0.0f64; n];
    let mut voiced_f0 = (0.0, 0usize);
    let mut i0 = 0;
    let ramp = 0.015 * fs;
    for &(seg, len) in &segs {
        let amp = rng.gen_range(0.5..1.0);
        match seg {
            Segment::Vowel(v) => {
                for (k, r) in res.iter_mut().enumerate() {
                    r.tune(spk.vowel_formants(v)[k], BANDWIDTHS[k]);
                }
            }
            Segment::Fricative => fric.tune(rng.gen_range(3500.0..5500.0), 3000.0),
            Segment::Silence => {}
        }
        for j in 0..len {
            let i = i0 + j;
            let env = (j as f64 / ramp).min((len - j) as f64 / ramp).min(1.0);
            let env = 0.5 - 0.5 * (PI * env).cos();
            let x = match seg {
                Segment::Vowel(_) => {
                    let f0 = f0_at(i);
                    let dt = f0 / fs;
                    phase += dt;
                    if phase >= 1.0 {
                        phase -= 1.0;
                    }
                    if i % PITCH_HOP == PITCH_HOP / 2 {
                        voiced_f0.0 += f0;
                        voiced_f0.1 += 1;
                    }
                    let saw = 2.0 * phase - 1.0 - poly_blep(phase, dt);
                    let shaped: f64 = res.iter_mut().zip(FORMANT_GAINS).map(|(r, g)| g * r.tick(saw)).sum();
                    lp = (1.0 - pole) * shaped + pole * lp;
                    amp * env * lp
                }
                Segment::Fricative => {
                    let e: f64 = rng.sample(StandardNormal);
                    0.15 * amp * env * fric.tick(e)
                }
                Segment::Silence => 0.0,
            };
            out[i] = x;
        }
        i0 += len;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = out
        .iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            let s = v / peak * PEAK + 1e-4 * e;
            ((s * 32767.0).round() / 32768.0) as f32
        })
        .collect();
    Synth {
        samples,
        trajectory_mean_hz: (voiced_f0.1 > 0).then(|| voiced_f0.0 / voiced_f0.1 as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_pole_hits_target_drop() {
        for tilt in [-1.0, -3.0, -4.5] {
            let a = tilt_pole(tilt);
            let drop = 20.0 * (one_pole_gain(a, 500.0) / one_pole_gain(a, 4000.0)).log10();
            assert!((drop + 3.0 * tilt).abs() < 1e-6, "{tilt} {drop}");
        }
        assert_eq!(tilt_pole(0.0), 0.0);
    }

    #[test]
    fn panel_is_valid_and_ordered() {
        let p = SyntheticSpeaker::panel(10, 3);
        assert_eq!(p.len(), 10);
        assert_eq!(p[1].f0_base_hz, 120.0);
        assert_eq!(p[6].f0_base_hz, 240.0);
        for s in &p {
            s.validate().unwrap();
        }
    }

    #[test]
    fn plan_fills_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [8000, 16000, 48000] {
            let segs = plan(n, &mut rng);
            assert_eq!(segs.iter().map(|s| s.1).sum::<usize>(), n);
            assert!(segs.iter().any(|s| matches!(s.0, Segment::Vowel(_))));
        }
    }

    #[test]
    fn generated_bundle_is_aligned() {
        let c = generate_corpus(2, 2, 5).unwrap();
        assert_eq!(c.len(), 4);
        for u in &c.utterances {
            u.check_alignment().unwrap();
            assert_eq!(u.audio.len() % FRAME, 0);
            let d = u.audio.duration_s();
            assert!((0.98..=3.0).contains(&d), "{d}");
        }
    }
}
