use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network widths and depths for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub pitch_denoiser_channels: usize,
    pub unet_channels: Vec<usize>,
    pub encoder_channels: usize,
    pub d_style: usize,
    /// Dilations run `1, 2, ..., 2^dilation_depth`, repeated twice.
    pub dilation_depth: usize,
    pub time_embed_dim: usize,
    pub style_hidden: usize,
    /// Residual blocks in each encoder.
    pub encoder_layers: usize,
    /// Expected spread of `x0 - z` for the pitch stage (log-F0 units); sets
    /// the input scaling and skip path of the pitch denoiser.
    pub pitch_residual_scale: f64,
    /// Same for the Mel stage (log-Mel units).
    pub mel_residual_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pitch_denoiser_channels: 16,
            unet_channels: vec![16, 32, 64],
            encoder_channels: 32,
            d_style: 32,
            dilation_depth: 3,
            time_embed_dim: 16,
            style_hidden: 64,
            encoder_layers: 3,
            pitch_residual_scale: 0.03,
            mel_residual_scale: 0.5,
        }
    }
}

impl ModelConfig {
    /// Widths of the full-size configuration.
    pub fn paper_scale() -> Self {
        Self {
            pitch_denoiser_channels: 64,
            unet_channels: vec![64, 128, 256],
            encoder_channels: 128,
            d_style: 128,
            dilation_depth: 9,
            time_embed_dim: 64,
            style_hidden: 256,
            encoder_layers: 6,
            ..Self::default()
        }
    }

    /// Small widths for gradient checks.
    pub fn tiny() -> Self {
        Self {
            pitch_denoiser_channels: 4,
            unet_channels: vec![4, 4, 8],
            encoder_channels: 4,
            d_style: 3,
            dilation_depth: 1,
            time_embed_dim: 4,
            style_hidden: 4,
            encoder_layers: 1,
            ..Self::default()
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        let cycle: Vec<usize> = (0..=self.dilation_depth).map(|k| 1 << k).collect();
        cycle.iter().chain(&cycle).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.pitch_denoiser_channels,
            self.encoder_channels,
            self.d_style,
            self.time_embed_dim,
            self.style_hidden,
            self.encoder_layers,
        ];
        if positive.contains(&0) || self.unet_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.unet_channels.len() != 3 {
            return Err(Error::Config(format!(
                "unet_channels needs three levels, got {:?}",
                self.unet_channels
            )));
        }
        if self.unet_channels.iter().any(|c| c % 4 != 0) {
            return Err(Error::Config("unet_channels must be multiples of 4 (group norm)".into()));
        }
        if self.dilation_depth > 12 {
            return Err(Error::Config("dilation_depth above 12 is not supported".into()));
        }
        if !(self.pitch_residual_scale > 0.0 && self.mel_residual_scale > 0.0) {
            return Err(Error::Config("residual scales must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let p = ModelConfig::paper_scale();
        p.validate().unwrap();
        assert_eq!((p.pitch_denoiser_channels, p.encoder_channels), (64, 128));
        assert_eq!(p.unet_channels, vec![64, 128, 256]);
    }

    #[test]
    fn dilation_cycles() {
        assert_eq!(ModelConfig::default().dilations(), vec![1, 2, 4, 8, 1, 2, 4, 8]);
    }

    #[test]
    fn bad_widths_rejected() {
        let c = ModelConfig {
            unet_channels: vec![6, 8, 12],
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
