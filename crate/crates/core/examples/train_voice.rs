// A short voice-stage run with a masked prior on a narrow U-Net.

use hiervc::pipeline::{generate_corpus, mel_prior_l1, train_diffvoice, TrainSetup};

pub fn run_example() {
    let corpus = generate_corpus(2, 3, 9).unwrap();
    let (train, held) = corpus.split(1);
    let mut setup = TrainSetup::default();
    setup.model.unet_channels = vec![4, 8, 8];
    setup.train.log_every = 0;

    let state = train_diffvoice(&train, &setup, 30, 0.3).unwrap();
    let h = &state.voice.as_ref().unwrap().history;
    for r in h.iter().step_by(10) {
        println!("step {:>2}: recon {:.3}, score {:.3}, grad norm {:.2}", r.step, r.recon, r.dsm, r.grad_norm);
    }
    let first = h[..5].iter().map(|r| r.loss).sum::<f64>();
    let last = h[h.len() - 5..].iter().map(|r| r.loss).sum::<f64>();
    assert!(last < first);
    let l1 = mel_prior_l1(&state, &held.utterances).unwrap();
    println!("held-out Mel prior L1 {l1:.3}");
    assert!(l1.is_finite());
}

#[allow(dead_code)]
fn main() {
    run_example();
}
