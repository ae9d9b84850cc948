use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, SamplerConfig};
use crate::dsp::DEFAULT_CONTENT_DIM;
use crate::error::{Error, Result};
use crate::nets::ModelConfig;
use crate::pipeline::{TrainConfig, TrainSetup};
use crate::pitch::{TrackerConfig, PITCH_HOP};

/// Samples per training segment at full size; 112 Mel frames.
pub const PAPER_SEGMENT_SAMPLES: usize = 35_840;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspSection {
    /// Cepstral coefficients per content frame.
    pub content_dim: usize,
    pub griffin_lim_iterations: usize,
}

impl Default for DspSection {
    fn default() -> Self {
        Self {
            content_dim: DEFAULT_CONTENT_DIM,
            griffin_lim_iterations: 32,
        }
    }
}

/// Everything a command can be configured with, one TOML table per module.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dsp: DspSection,
    pub pitch: TrackerConfig,
    pub diffusion: NoiseSchedule,
    pub nets: ModelConfig,
    pub train: TrainConfig,
    pub sample: SamplerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Full-size network widths and the 35,840-sample voice segment.
    pub fn with_paper_scale(mut self) -> Self {
        self.nets = ModelConfig::paper_scale();
        self.train.voice_crop_frames = PAPER_SEGMENT_SAMPLES / (PITCH_HOP * 4);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dsp.content_dim == 0 {
            return Err(Error::Config("dsp.content_dim must be positive".into()));
        }
        if self.pitch.hop != PITCH_HOP {
            return Err(Error::Config(format!(
                "pitch.hop must be {PITCH_HOP} to stay aligned with the Mel frames"
            )));
        }
        NoiseSchedule::new(self.diffusion.beta0, self.diffusion.beta1).map_err(|e| Error::Config(e.to_string()))?;
        self.nets.validate()?;
        self.train.validate()?;
        self.sample.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            model: self.nets.clone(),
            schedule: self.diffusion,
            train: self.train.clone(),
            content_dim: self.dsp.content_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig::default().with_paper_scale();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.train.voice_crop_frames, 112);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = RunConfig::from_toml("[vocoder]\n").unwrap_err();
        assert!(e.to_string().contains("vocoder"), "{e}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_toml("[diffusion]\nbeta1 = 10.0\n[sample]\nn_steps = 6\n").unwrap();
        assert_eq!((cfg.diffusion.beta0, cfg.diffusion.beta1), (0.05, 10.0));
        assert_eq!(cfg.sample.n_steps, 6);
        assert!(RunConfig::from_toml("[pitch]\nhop = 100\n").is_err());
        assert!(RunConfig::from_toml("[diffusion]\nbeta0 = 30.0\n").is_err());
    }
}
