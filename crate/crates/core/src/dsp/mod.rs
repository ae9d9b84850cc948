//! Audio ingestion, STFT and log-Mel analysis, perturbation, cepstral
//! content features and Griffin-Lim inversion.

pub mod audio;
pub mod content;
pub mod griffin_lim;
pub mod mel;
pub mod perturb;
pub mod stft;

pub use audio::{AudioBuffer, SAMPLE_RATE};
pub use content::{cepstrum, content_features, ContentFeatures, DEFAULT_CONTENT_DIM};
pub use griffin_lim::{griffin_lim, GriffinLim, GriffinLimOutput};
pub use mel::{log_floor, mel_project, MelAnalyzer, MelFilterbank, MelSpectrogram, LOG_FLOOR};
pub use perturb::{perturb_waveform, perturb_with, PeakingBand, PerturbParams};
pub use stft::{stft, Spectrogram, Stft, StftConfig};
