//! Corpus synthesis, the two training loops and end-to-end conversion.

pub mod convert;
pub mod corpus;
pub mod sweep;
pub mod train;

pub use corpus::{
    generate_corpus, generate_corpus_with, generate_for, Corpus, CorpusConfig, SyntheticSpeaker, Utterance,
    NEUTRAL_FORMANTS,
};
pub use train::{
    continue_diffpitch, continue_diffvoice, loss_reduction, mel_prior_l1, pitch_prior_l1, read_history, train_diffpitch,
    train_diffvoice, write_history, LossRecord, Stage, StageState, StyleSource, TrainConfig, TrainSetup, TrainState, N_MELS,
};
pub use convert::{
    convert, f0_baseline_compare, masked_band_reconstruction, self_reconstruction_l1, Conversion, F0Comparison, F0Metrics, MaskedBandReport,
};
pub use sweep::{masking_sweep, write_sweep, SweepRow, SWEEP_RATIOS};
