//! Desk-scale score networks, encoders and the gradient engine under them.

mod adam;
mod checkpoint;
mod config;
mod denoiser;
mod encoders;
pub mod gradcheck;
mod graph;
mod layers;
mod models;
mod params;
mod style;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, lr_schedule, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use denoiser::{precondition, MelDenoiser, PitchDenoiser, Precondition};
pub use encoders::{
    DilatedEncoder, PitchEncoder, SourceFilterEncoder, SourceFilterOutput, SourceFilterVars, LOG_F0_CENTER,
};
pub use graph::{Grads, Graph, Var};
pub use layers::sinusoidal_embedding;
pub use models::{
    encode_pitch_prior, encode_source_filter, mel_score_net, pitch_score_net, style_embed, PitchModel, VoiceModel,
};
pub use params::ParamStore;
pub use style::{pooled_stats, StyleEmbedder, StyleEmbedding};
pub use tensor::Tensor;
