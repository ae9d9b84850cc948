//! End-to-end conversion and the evaluations built on it.

use std::path::Path;

use serde::Serialize;

use super::corpus::Utterance;
use super::train::{mel_values, Stage, TrainState, N_MELS};
use crate::diffusion::{apply_frequency_mask, reverse_sample, DiffusionPrior, SamplerConfig};
use crate::dsp::{ContentFeatures, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nets::{PitchModel, StyleEmbedding, VoiceModel};
use crate::pitch::{compute_stats, denormalize_f0, normalize_f0, PitchBand, PitchContour, TrackerConfig};

/// Seed offset separating the Mel sampler's noise from the pitch sampler's.
const MEL_SEED_SALT: u64 = 0x6d65_6c00;

#[derive(Debug, Clone)]
pub struct Conversion {
    pub f0: PitchContour,
    pub mel: MelSpectrogram,
    /// Pitch prior from the encoder, log(F0 + 1) per contour sample.
    pub z_p: Vec<f64>,
    /// Mel prior from the source-filter encoder.
    pub z_m: MelSpectrogram,
}

/// Trained stage models and parameters, ready for inference.
struct Stages<'a> {
    pitch: PitchModel,
    voice: VoiceModel,
    state: &'a TrainState,
}

impl<'a> Stages<'a> {
    fn new(state: &'a TrainState) -> Result<Self> {
        Ok(Self {
            pitch: state.require(Stage::Pitch)?.setup.pitch_model()?,
            voice: state.require(Stage::Voice)?.setup.voice_model()?,
            state,
        })
    }

    fn pitch_params(&self) -> &crate::nets::ParamStore {
        &self.state.pitch.as_ref().expect("checked").params
    }

    fn voice_params(&self) -> &crate::nets::ParamStore {
        &self.state.voice.as_ref().expect("checked").params
    }

    fn pitch_sched(&self) -> crate::diffusion::NoiseSchedule {
        self.state.pitch.as_ref().expect("checked").setup.schedule
    }

    fn voice_sched(&self) -> crate::diffusion::NoiseSchedule {
        self.state.voice.as_ref().expect("checked").setup.schedule
    }

    fn pitch_prior(&self, source: &PitchContour, s: &StyleEmbedding) -> Result<Vec<f64>> {
        let stats = compute_stats(source)?;
        let norm = normalize_f0(source, &stats);
        self.pitch
            .encoder
            .encode(self.pitch_params(), &norm.values, &norm.voiced, s)
    }

    fn sample_pitch(&self, z_p: &[f64], s: &StyleEmbedding, cfg: &SamplerConfig) -> Result<Vec<f64>> {
        let prior = DiffusionPrior::new(z_p.to_vec(), vec![z_p.len()])?;
        let p = self.pitch_params();
        let out = reverse_sample(
            |x, z, t| self.pitch.denoiser.score(p, x, z, s, t),
            &prior,
            &self.pitch_sched(),
            cfg,
        )?;
        Ok(out.x)
    }

    /// Reverse-samples a Mel from `prior`, padding to a multiple of four
    /// frames by repeating the last frame and cropping back afterwards.
    fn sample_mel(&self, prior: &DiffusionPrior, s: &StyleEmbedding, cfg: &SamplerConfig) -> Result<MelSpectrogram> {
        let frames = prior.shape[0];
        let padded = frames.div_ceil(4) * 4;
        let mut z = prior.z.clone();
        let last = z[(frames - 1) * N_MELS..].to_vec();
        for _ in frames..padded {
            z.extend_from_slice(&last);
        }
        let mut padded_prior = DiffusionPrior::new(z, vec![padded, N_MELS])?;
        if let Some(m) = &prior.mask {
            let mut m = m.clone();
            let last = m[(frames - 1) * N_MELS..].to_vec();
            for _ in frames..padded {
                m.extend_from_slice(&last);
            }
            padded_prior.mask = Some(m);
        }
        let p = self.voice_params();
        let cfg = SamplerConfig {
            seed: cfg.seed ^ MEL_SEED_SALT,
            ..*cfg
        };
        let out = reverse_sample(
            |x, z, t| self.voice.denoiser.score(p, x, z, padded, s, t),
            &padded_prior,
            &self.voice_sched(),
            &cfg,
        )?;
        MelSpectrogram::new(frames, N_MELS, out.x[..frames * N_MELS].iter().map(|&v| v as f32).collect())
    }

    fn mel_prior(
        &self,
        content: &ContentFeatures,
        f0: &PitchContour,
        s: &StyleEmbedding,
    ) -> Result<MelSpectrogram> {
        Ok(self
            .voice
            .encoder
            .encode(self.voice_params(), content, f0.f0_hz(), f0.voiced(), s)?
            .z_m)
    }
}

fn band() -> PitchBand {
    TrackerConfig::default().band()
}

/// `exp(x) - 1` on the voiced frames of `voicing`, clamped to the tracker band.
fn to_contour(log_f0: &[f64], voicing: &PitchContour) -> Result<PitchContour> {
    let b = band();
    let f0 = log_f0
        .iter()
        .zip(voicing.voiced())
        .map(|(&x, &v)| if v { x.exp_m1().clamp(b.f_min_hz, b.f_max_hz) } else { 0.0 })
        .collect();
    PitchContour::new(f0, voicing.voiced().to_vec())
}

/// Converts `source` to the voice of `target`: the target's style drives
/// both stages, the source supplies normalised F0, voicing and content.
pub fn convert(source: &Utterance, target: &Utterance, state: &TrainState, cfg: &SamplerConfig) -> Result<Conversion> {
    let stages = Stages::new(state)?;
    if target.mel.n_frames() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: target.mel.n_frames(),
        });
    }
    source.check_alignment()?;
    let s_p = stages.pitch.style.embed(stages.pitch_params(), &target.mel)?;
    let s_v = stages.voice.style.embed(stages.voice_params(), &target.mel)?;

    let z_p = stages.pitch_prior(&source.contour, &s_p)?;
    let x = stages.sample_pitch(&z_p, &s_p, cfg)?;
    let f0 = to_contour(&x, &source.contour)?;

    let z_m = stages.mel_prior(&source.content, &f0, &s_v)?;
    let prior = DiffusionPrior::new(mel_values(&z_m), vec![z_m.n_frames(), N_MELS])?;
    let mel = stages.sample_mel(&prior, &s_v, cfg)?;
    Ok(Conversion { f0, mel, z_p, z_m })
}

/// Error summary of one converted contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F0Metrics {
    pub mean_hz: f64,
    /// Voiced-frame RMSE against the source contour.
    pub rmse_vs_source_hz: f64,
    /// Difference between the converted mean and the target utterance mean.
    pub mean_error_hz: f64,
}

#[derive(Debug, Clone)]
pub struct F0Comparison {
    pub source: PitchContour,
    pub denorm: PitchContour,
    pub encoder_only: PitchContour,
    pub diffpitch: PitchContour,
    pub target_mean_hz: f64,
    /// Generating base of the target speaker, when known.
    pub target_base_hz: Option<f64>,
}

impl F0Comparison {
    fn metrics(&self, c: &PitchContour) -> Result<F0Metrics> {
        let mean_hz = c.voiced_mean().ok_or(Error::NoVoicedFrames)?;
        Ok(F0Metrics {
            mean_hz,
            rmse_vs_source_hz: c.rmse_hz(&self.source)?,
            mean_error_hz: mean_hz - self.target_mean_hz,
        })
    }

    pub fn denorm_metrics(&self) -> Result<F0Metrics> {
        self.metrics(&self.denorm)
    }

    pub fn encoder_metrics(&self) -> Result<F0Metrics> {
        self.metrics(&self.encoder_only)
    }

    pub fn diffpitch_metrics(&self) -> Result<F0Metrics> {
        self.metrics(&self.diffpitch)
    }

    /// Per-frame trajectories: `frame,voiced,source_hz,denorm_hz,encoder_hz,diffpitch_hz`.
    pub fn write_trajectories(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let werr = |e: csv::Error| Error::format(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(werr)?;
        w.write_record(["frame", "voiced", "source_hz", "denorm_hz", "encoder_hz", "diffpitch_hz"])
            .map_err(werr)?;
        for i in 0..self.source.len() {
            w.write_record([
                i.to_string(),
                (self.source.voiced()[i] as u8).to_string(),
                self.source.f0_hz()[i].to_string(),
                self.denorm.f0_hz()[i].to_string(),
                self.encoder_only.f0_hz()[i].to_string(),
                self.diffpitch.f0_hz()[i].to_string(),
            ])
            .map_err(werr)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per method with its metrics.
    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            method: &'a str,
            mean_hz: f64,
            rmse_vs_source_hz: f64,
            mean_error_hz: f64,
            target_mean_hz: f64,
            target_base_hz: Option<f64>,
        }
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for (method, m) in [
            ("denorm", self.denorm_metrics()?),
            ("encoder_only", self.encoder_metrics()?),
            ("diffpitch", self.diffpitch_metrics()?),
        ] {
            w.serialize(Row {
                method,
                mean_hz: m.mean_hz,
                rmse_vs_source_hz: m.rmse_vs_source_hz,
                mean_error_hz: m.mean_error_hz,
                target_mean_hz: self.target_mean_hz,
                target_base_hz: self.target_base_hz,
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The three pitch conversions side by side: affine transport onto the
/// target statistics, the encoder prior alone, and the full diffusion
/// sample. `target_base_hz` is the target speaker's generating base, when
/// the corpus is synthetic.
pub fn f0_baseline_compare(
    source: &Utterance,
    target: &Utterance,
    state: &TrainState,
    cfg: &SamplerConfig,
    target_base_hz: Option<f64>,
) -> Result<F0Comparison> {
    let st = state.require(Stage::Pitch)?;
    let model = st.setup.pitch_model()?;
    let src_stats = compute_stats(&source.contour)?;
    let tgt_stats = compute_stats(&target.contour)?;
    let norm = normalize_f0(&source.contour, &src_stats);
    let denorm = denormalize_f0(&norm, &tgt_stats, band())?;

    let s = model.style.embed(&st.params, &target.mel)?;
    let z_p = model.encoder.encode(&st.params, &norm.values, &norm.voiced, &s)?;
    let encoder_only = to_contour(&z_p, &source.contour)?;
    let prior = DiffusionPrior::new(z_p, vec![norm.len()])?;
    let out = reverse_sample(
        |x, z, t| model.denoiser.score(&st.params, x, z, &s, t),
        &prior,
        &st.setup.schedule,
        cfg,
    )?;
    let diffpitch = to_contour(&out.x, &source.contour)?;
    Ok(F0Comparison {
        source: source.contour.clone(),
        denorm,
        encoder_only,
        diffpitch,
        target_mean_hz: tgt_stats.mean_hz,
        target_base_hz,
    })
}

/// L1 errors on artificially masked Mel bands of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskedBandReport {
    pub masked_bins: usize,
    /// Reverse sample conditioned on the masked prior.
    pub reconstruction_l1: f64,
    /// The unmasked encoder prior.
    pub unmasked_prior_l1: f64,
    /// The masked prior as given (bands at the log floor).
    pub masked_prior_l1: f64,
}

/// The utterance's own Mel prior (clean content, analysed contour, own
/// style), optionally band-masked, and a reverse sample drawn from it.
struct Reconstruction {
    prior: DiffusionPrior,
    masked: DiffusionPrior,
    sample: Vec<f64>,
}

fn reconstruct(utt: &Utterance, state: &TrainState, ratio: f64, mask_seed: u64, cfg: &SamplerConfig) -> Result<Reconstruction> {
    let st = state.require(Stage::Voice)?;
    let model = st.setup.voice_model()?;
    let s = model.style.embed(&st.params, &utt.mel)?;
    let z_m = model
        .encoder
        .encode(&st.params, &utt.content, utt.contour.f0_hz(), utt.contour.voiced(), &s)?
        .z_m;
    let frames = z_m.n_frames();
    let prior = DiffusionPrior::new(mel_values(&z_m), vec![frames, N_MELS])?;
    let masked = apply_frequency_mask(&prior, ratio, mask_seed)?;
    let padded = frames.div_ceil(4) * 4;
    let mut z = masked.z.clone();
    let last = z[(frames - 1) * N_MELS..].to_vec();
    for _ in frames..padded {
        z.extend_from_slice(&last);
    }
    let mut out = reverse_sample(
        |x, zz, t| model.denoiser.score(&st.params, x, zz, padded, &s, t),
        &DiffusionPrior::new(z, vec![padded, N_MELS])?,
        &st.setup.schedule,
        &SamplerConfig {
            seed: cfg.seed ^ MEL_SEED_SALT,
            ..*cfg
        },
    )?;
    out.x.truncate(frames * N_MELS);
    Ok(Reconstruction {
        prior,
        masked,
        sample: out.x,
    })
}

/// Mean L1 between the utterance's Mel and a reverse sample from its own
/// unmasked prior.
pub fn self_reconstruction_l1(utt: &Utterance, state: &TrainState, cfg: &SamplerConfig) -> Result<f64> {
    let r = reconstruct(utt, state, 0.0, 0, cfg)?;
    let truth = mel_values(&utt.mel);
    Ok(r.sample.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64)
}

/// Masks bands of the utterance's own Mel prior, reverse-samples from the
/// masked prior and scores every candidate on the masked cells only.
pub fn masked_band_reconstruction(
    utt: &Utterance,
    state: &TrainState,
    ratio: f64,
    mask_seed: u64,
    cfg: &SamplerConfig,
) -> Result<MaskedBandReport> {
    let r = reconstruct(utt, state, ratio, mask_seed, cfg)?;
    let frames = r.prior.shape[0];
    let truth = mel_values(&utt.mel);
    let n = r.masked.mask.as_ref().map_or(0, |m| m.iter().filter(|&&m| m).count());
    if n == 0 {
        return Err(Error::InvalidInput("mask ratio selects no bins".into()));
    }
    let mask = r.masked.mask.as_ref().expect("non-empty mask");
    let l1 = |v: &[f64]| {
        v.iter()
            .zip(&truth)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).abs())
            .sum::<f64>()
            / n as f64
    };
    Ok(MaskedBandReport {
        masked_bins: n / frames,
        reconstruction_l1: l1(&r.sample),
        unmasked_prior_l1: l1(&r.prior.z),
        masked_prior_l1: l1(&r.masked.z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelConfig;
    use crate::pipeline::corpus::generate_corpus;
    use crate::pipeline::train::{continue_diffvoice, train_diffpitch, TrainConfig, TrainSetup};

    fn tiny_state() -> (crate::pipeline::Corpus, TrainState) {
        let corpus = generate_corpus(2, 2, 8).unwrap();
        let setup = TrainSetup {
            model: ModelConfig::tiny(),
            train: TrainConfig {
                batch_size: 1,
                pitch_crop: 32,
                voice_crop_frames: 8,
                content_perturbations: 0,
                log_every: 0,
                ..TrainConfig::default()
            },
            ..TrainSetup::default()
        };
        let mut state = train_diffpitch(&corpus, &setup, 2).unwrap();
        continue_diffvoice(&mut state, &corpus, &setup, 2).unwrap();
        (corpus, state)
    }

    #[test]
    fn untrained_state_is_rejected() {
        let corpus = generate_corpus(1, 1, 8).unwrap();
        let u = &corpus.utterances[0];
        let r = convert(u, u, &TrainState::default(), &SamplerConfig::new(2, 0));
        assert!(matches!(r, Err(Error::Uninitialized(_))));
    }

    #[test]
    fn conversion_keeps_alignment_and_voicing() {
        let (corpus, state) = tiny_state();
        let (a, b) = (&corpus.utterances[0], &corpus.utterances[3]);
        let out = convert(a, b, &state, &SamplerConfig::new(3, 1)).unwrap();
        assert_eq!(out.f0.voiced(), a.contour.voiced());
        assert_eq!(out.mel.n_frames(), a.n_frames());
        assert_eq!(out.f0.len(), 4 * out.mel.n_frames());
        let again = convert(a, b, &state, &SamplerConfig::new(3, 1)).unwrap();
        assert_eq!(again.mel, out.mel);
    }

    #[test]
    fn unvoiced_source_fails() {
        let (corpus, state) = tiny_state();
        let mut a = corpus.utterances[0].clone();
        a.contour = PitchContour::unvoiced(a.contour.len());
        let r = convert(&a, &corpus.utterances[1], &state, &SamplerConfig::new(2, 0));
        assert!(matches!(r, Err(Error::NoVoicedFrames)));
    }

    #[test]
    fn denorm_baseline_hits_target_mean() {
        let (corpus, state) = tiny_state();
        let (a, b) = (&corpus.utterances[0], &corpus.utterances[2]);
        let cmp = f0_baseline_compare(a, b, &state, &SamplerConfig::new(2, 0), None).unwrap();
        let m = cmp.denorm_metrics().unwrap();
        assert!(m.mean_error_hz.abs() < 1e-9, "{m:?}");
        assert_eq!(cmp.denorm.len(), cmp.diffpitch.len());
        assert_eq!(cmp.encoder_only.len(), cmp.source.len());
    }

    #[test]
    fn masked_report_counts_bins() {
        let (corpus, state) = tiny_state();
        let r = masked_band_reconstruction(&corpus.utterances[1], &state, 0.3, 4, &SamplerConfig::new(2, 0)).unwrap();
        assert_eq!(r.masked_bins, 24);
        assert!(r.masked_prior_l1 > 0.0 && r.reconstruction_l1.is_finite());
    }
}
