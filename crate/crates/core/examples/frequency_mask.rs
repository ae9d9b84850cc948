// Masks 30% of the Mel bins of a prior, the corruption the voice-stage
// denoiser learns to fill in.

use hiervc::diffusion::{apply_frequency_mask, masked_bins, DiffusionPrior};
use hiervc::dsp::log_floor;

pub fn run_example() {
    let frames = 4;
    let z: Vec<f64> = (0..frames * 80).map(|i| -4.0 + (i % 80) as f64 * 0.01).collect();
    let prior = DiffusionPrior::new(z, vec![frames, 80]).unwrap();
    let masked = apply_frequency_mask(&prior, 0.3, 42).unwrap();

    let bins = masked_bins(80, 0.3, 42).unwrap();
    let picked: Vec<usize> = (0..80).filter(|&m| bins[m]).collect();
    println!("masked bins: {picked:?}");
    assert_eq!(picked.len(), 24);
    assert_eq!(masked.masked_count(), frames * 24);
    let floor = log_floor() as f64;
    assert!(picked.iter().all(|&m| masked.z[m] == floor));

    let none = apply_frequency_mask(&prior, 0.0, 42).unwrap();
    assert_eq!(none.z, prior.z);
}

#[allow(dead_code)]
fn main() {
    run_example();
}
