//! Masking-ratio ablation: one voice-stage run per ratio, scored on
//! held-out utterances.

use std::path::Path;

use serde::Serialize;

use super::convert::{masked_band_reconstruction, self_reconstruction_l1};
use super::corpus::Corpus;
use super::train::{continue_diffvoice, loss_reduction, TrainSetup, TrainState};
use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};

pub const SWEEP_RATIOS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

/// Ratio and seed of the fixed evaluation mask, shared by every run.
const EVAL_MASK_RATIO: f64 = 0.3;
const EVAL_MASK_SEED: u64 = 0x5eed_3a5c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub mask_ratio: f64,
    pub steps: u64,
    /// Mean loss over the last tenth of the run.
    pub final_loss: f64,
    /// Smoothed relative loss decrease, if the run is long enough to tell.
    pub loss_reduction: Option<f64>,
    /// Mean L1 of unmasked-prior reconstructions of held-out Mels.
    pub self_l1: f64,
    /// Mean L1 on a fixed set of masked bands.
    pub masked_band_l1: f64,
    /// The masked bands' L1 for the unmasked prior itself.
    pub prior_band_l1: f64,
}

/// Trains the voice stage once per ratio from the same seed and scores each
/// run on `held_out`. Runs share everything except the masking ratio.
pub fn masking_sweep(
    train: &Corpus,
    held_out: &Corpus,
    setup: &TrainSetup,
    steps: u64,
    ratios: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<SweepRow>> {
    if held_out.is_empty() {
        return Err(Error::InvalidInput("sweep needs held-out utterances".into()));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut s = setup.clone();
        s.train.mask_ratio = ratio;
        let mut state = TrainState::default();
        continue_diffvoice(&mut state, train, &s, steps)?;
        let history = &state.voice.as_ref().expect("trained").history;
        let tail = (history.len() / 10).max(1);
        let final_loss = history[history.len() - tail..].iter().map(|r| r.loss).sum::<f64>() / tail as f64;

        let (mut self_l1, mut band_l1, mut prior_l1) = (0.0, 0.0, 0.0);
        for u in &held_out.utterances {
            self_l1 += self_reconstruction_l1(u, &state, cfg)?;
            let r = masked_band_reconstruction(u, &state, EVAL_MASK_RATIO, EVAL_MASK_SEED, cfg)?;
            band_l1 += r.reconstruction_l1;
            prior_l1 += r.unmasked_prior_l1;
        }
        let n = held_out.len() as f64;
        log::info!("sweep ratio {ratio}: final loss {final_loss:.4}, self L1 {:.4}", self_l1 / n);
        rows.push(SweepRow {
            mask_ratio: ratio,
            steps,
            final_loss,
            loss_reduction: loss_reduction(history, (history.len() / 20).max(1)),
            self_l1: self_l1 / n,
            masked_band_l1: band_l1 / n,
            prior_band_l1: prior_l1 / n,
        });
    }
    Ok(rows)
}

pub fn write_sweep(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelConfig;
    use crate::pipeline::corpus::generate_corpus;
    use crate::pipeline::train::TrainConfig;

    #[test]
    fn every_ratio_gets_a_row() {
        let corpus = generate_corpus(2, 2, 4).unwrap();
        let (train, held) = corpus.split(1);
        let setup = TrainSetup {
            model: ModelConfig::tiny(),
            train: TrainConfig {
                batch_size: 1,
                voice_crop_frames: 8,
                content_perturbations: 0,
                log_every: 0,
                ..TrainConfig::default()
            },
            ..TrainSetup::default()
        };
        let rows = masking_sweep(&train, &held, &setup, 2, &[0.0, 0.5], &SamplerConfig::new(2, 0)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.final_loss.is_finite() && r.self_l1 > 0.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("mask_ratio,steps,final_loss"));
        assert_eq!(text.lines().count(), 3);
    }
}
