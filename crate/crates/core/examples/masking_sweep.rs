// The masking-ratio ablation at a tiny budget. The table shape matters
// here, not the numbers.

use hiervc::diffusion::SamplerConfig;
use hiervc::pipeline::{generate_corpus, masking_sweep, write_sweep, TrainSetup, SWEEP_RATIOS};

pub fn run_example() {
    let corpus = generate_corpus(2, 2, 3).unwrap();
    let (train, held) = corpus.split(1);
    let mut setup = TrainSetup::default();
    setup.model.unet_channels = vec![4, 4, 8];
    setup.train.batch_size = 2;
    setup.train.log_every = 0;
    let rows = masking_sweep(&train, &held, &setup, 3, &SWEEP_RATIOS, &SamplerConfig::new(4, 0)).unwrap();
    println!("ratio  final loss  self L1  masked-band L1");
    for r in &rows {
        println!("{:>5.1}  {:>10.4}  {:>7.4}  {:>14.4}", r.mask_ratio, r.final_loss, r.self_l1, r.masked_band_l1);
    }
    assert_eq!(rows.len(), SWEEP_RATIOS.len());
    let dir = tempfile::tempdir().unwrap();
    write_sweep(dir.path().join("sweep.csv"), &rows).unwrap();
}

#[allow(dead_code)]
fn main() {
    run_example();
}
