//! The two trainable stages assembled from their parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::denoiser::{MelDenoiser, PitchDenoiser};
use super::encoders::{PitchEncoder, SourceFilterEncoder, SourceFilterOutput};
use super::params::ParamStore;
use super::style::{StyleEmbedder, StyleEmbedding};
use crate::diffusion::NoiseSchedule;
use crate::dsp::{ContentFeatures, MelSpectrogram};
use crate::error::Result;

/// Style embedder, pitch encoder and pitch denoiser.
#[derive(Debug, Clone)]
pub struct PitchModel {
    pub style: StyleEmbedder,
    pub encoder: PitchEncoder,
    pub denoiser: PitchDenoiser,
}

impl PitchModel {
    pub fn new(cfg: &ModelConfig, sched: NoiseSchedule, n_mels: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            style: StyleEmbedder::new("pitch_style", n_mels, cfg.style_hidden, cfg.d_style),
            encoder: PitchEncoder::new("pitch_enc", cfg.encoder_channels, cfg.encoder_layers, cfg.d_style),
            denoiser: PitchDenoiser {
                prefix: "pitch_den".into(),
                channels: cfg.pitch_denoiser_channels,
                dilations: cfg.dilations(),
                d_style: cfg.d_style,
                time_embed_dim: cfg.time_embed_dim,
                residual_scale: cfg.pitch_residual_scale,
                sched,
            },
        })
    }

    /// Fresh parameters; `log_f0_bias` seeds the encoder output bias.
    pub fn init(&self, seed: u64, log_f0_bias: Option<f32>) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        self.style.init(&mut p, &mut rng);
        self.encoder.init(&mut p, &mut rng);
        self.denoiser.init(&mut p, &mut rng);
        if let Some(b) = log_f0_bias {
            p.insert(format!("{}.out.b", self.encoder.net.prefix), super::Tensor::vector(vec![b]));
        }
        p
    }
}

/// Style embedder, source-filter encoder and Mel denoiser.
#[derive(Debug, Clone)]
pub struct VoiceModel {
    pub style: StyleEmbedder,
    pub encoder: SourceFilterEncoder,
    pub denoiser: MelDenoiser,
}

impl VoiceModel {
    pub fn new(cfg: &ModelConfig, sched: NoiseSchedule, n_mels: usize, content_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let u = &cfg.unet_channels;
        Ok(Self {
            style: StyleEmbedder::new("voice_style", n_mels, cfg.style_hidden, cfg.d_style),
            encoder: SourceFilterEncoder::new(cfg.encoder_channels, cfg.encoder_layers, cfg.d_style, content_dim, n_mels),
            denoiser: MelDenoiser {
                prefix: "mel_den".into(),
                channels: [u[0], u[1], u[2]],
                d_style: cfg.d_style,
                time_embed_dim: cfg.time_embed_dim,
                residual_scale: cfg.mel_residual_scale,
                sched,
            },
        })
    }

    /// Fresh parameters; `mel_bias` seeds the source-path output bias.
    pub fn init(&self, seed: u64, mel_bias: Option<&[f32]>) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        self.style.init(&mut p, &mut rng);
        self.encoder.init(&mut p, &mut rng, mel_bias);
        self.denoiser.init(&mut p, &mut rng);
        p
    }
}

pub fn style_embed(embedder: &StyleEmbedder, params: &ParamStore, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
    embedder.embed(params, mel)
}

pub fn encode_pitch_prior(
    model: &PitchModel,
    params: &ParamStore,
    norm_f0: &[f64],
    voiced: &[bool],
    s: &StyleEmbedding,
) -> Result<Vec<f64>> {
    model.encoder.encode(params, norm_f0, voiced, s)
}

pub fn encode_source_filter(
    model: &VoiceModel,
    params: &ParamStore,
    content: &ContentFeatures,
    f0_hz: &[f64],
    voiced: &[bool],
    s: &StyleEmbedding,
) -> Result<SourceFilterOutput> {
    model.encoder.encode(params, content, f0_hz, voiced, s)
}

pub fn pitch_score_net(
    model: &PitchModel,
    params: &ParamStore,
    x_t: &[f64],
    z_p: &[f64],
    s: &StyleEmbedding,
    t: f64,
) -> Result<Vec<f64>> {
    model.denoiser.score(params, x_t, z_p, s, t)
}

pub fn mel_score_net(
    model: &VoiceModel,
    params: &ParamStore,
    x_t: &MelSpectrogram,
    z_m: &MelSpectrogram,
    s: &StyleEmbedding,
    t: f64,
) -> Result<Vec<f64>> {
    let x: Vec<f64> = x_t.values().iter().map(|&v| v as f64).collect();
    let z: Vec<f64> = z_m.values().iter().map(|&v| v as f64).collect();
    model.denoiser.score(params, &x, &z, x_t.n_frames(), s, t)
}
