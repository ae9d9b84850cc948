use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::DiffusionPrior;
use crate::dsp::log_floor;
use crate::error::{Error, Result};

const MIN_BAND: usize = 4;
const MAX_BAND: usize = 12;
const MAX_DRAWS: usize = 10_000;

/// Mel bins chosen for masking: contiguous random bands until exactly
/// `round(ratio * n_bins)` bins are covered. The last band is cut short so
/// the count is exact.
pub fn masked_bins(n_bins: usize, ratio: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Domain(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let target = (ratio * n_bins as f64).round() as usize;
    let mut bins = vec![false; n_bins];
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0;
    while count < target {
        let width = rng.gen_range(MIN_BAND..=MAX_BAND).min(n_bins);
        let start = if draws < MAX_DRAWS {
            rng.gen_range(0..=n_bins - width)
        } else {
            // Only reached if random bands keep landing on covered bins.
            bins.iter().position(|&b| !b).unwrap_or(0)
        };
        draws += 1;
        for b in bins[start..start + width].iter_mut() {
            if count == target {
                break;
            }
            if !*b {
                *b = true;
                count += 1;
            }
        }
    }
    Ok(bins)
}

/// Masks whole Mel bands of a `[frames, n_mels]` prior, setting them to the
/// log floor and recording the mask.
pub fn apply_frequency_mask(prior: &DiffusionPrior, ratio: f64, seed: u64) -> Result<DiffusionPrior> {
    let &[frames, n_mels] = prior.shape.as_slice() else {
        return Err(Error::Shape(format!(
            "frequency mask needs a [frames, mels] prior, got {:?}",
            prior.shape
        )));
    };
    let bins = masked_bins(n_mels, ratio, seed)?;
    let fill = log_floor() as f64;
    let mut z = prior.z.clone();
    let mut mask = prior.mask.clone().unwrap_or_else(|| vec![false; z.len()]);
    for f in 0..frames {
        for (m, &hit) in bins.iter().enumerate() {
            if hit {
                z[f * n_mels + m] = fill;
                mask[f * n_mels + m] = true;
            }
        }
    }
    Ok(DiffusionPrior {
        z,
        shape: prior.shape.clone(),
        mask: Some(mask),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mel_prior(frames: usize) -> DiffusionPrior {
        DiffusionPrior::new((0..frames * 80).map(|i| i as f64 * 0.01).collect(), vec![frames, 80]).unwrap()
    }

    #[test]
    fn ratio_zero_is_identity() {
        let p = mel_prior(5);
        let m = apply_frequency_mask(&p, 0.0, 3).unwrap();
        assert_eq!(m.z, p.z);
        assert_eq!(m.masked_count(), 0);
    }

    #[test]
    fn exact_counts() {
        for (ratio, bins) in [(0.3, 24), (0.9, 72), (0.1, 8), (0.5, 40)] {
            let m = apply_frequency_mask(&mel_prior(3), ratio, 11).unwrap();
            assert_eq!(m.masked_count(), 3 * bins, "ratio {ratio}");
        }
    }

    #[test]
    fn masked_cells_hold_floor() {
        let m = apply_frequency_mask(&mel_prior(2), 0.3, 5).unwrap();
        let mask = m.mask.as_ref().unwrap();
        for (v, &hit) in m.z.iter().zip(mask) {
            if hit {
                assert_eq!(*v, log_floor() as f64);
            }
        }
    }

    #[test]
    fn ratio_one_rejected() {
        assert!(matches!(apply_frequency_mask(&mel_prior(2), 1.0, 0), Err(Error::Domain(_))));
        assert!(apply_frequency_mask(&DiffusionPrior::scalar(0.0), 0.3, 0).is_err());
    }

    proptest! {
        #[test]
        fn every_seed_masks_exactly(seed in any::<u64>(), r in 0.0f64..0.99) {
            let bins = masked_bins(80, r, seed).unwrap();
            prop_assert_eq!(bins.iter().filter(|&&b| b).count(), (r * 80.0).round() as usize);
        }
    }
}
