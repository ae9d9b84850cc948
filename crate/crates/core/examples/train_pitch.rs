// A short pitch-stage run on a small corpus, then a resumed run that
// reproduces it exactly.

use hiervc::pipeline::{continue_diffpitch, generate_corpus, train_diffpitch, TrainSetup, TrainState};

pub fn run_example() {
    let corpus = generate_corpus(3, 3, 5).unwrap();
    let mut setup = TrainSetup::default();
    setup.train.log_every = 0;

    let state = train_diffpitch(&corpus, &setup, 60).unwrap();
    let h = &state.pitch.as_ref().unwrap().history;
    let mean = |r: &[hiervc::pipeline::LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    println!("loss over steps 0-9 {:.4}, steps 50-59 {:.4}", mean(&h[..10]), mean(&h[50..]));
    assert!(mean(&h[50..]) < mean(&h[..10]));

    let dir = tempfile::tempdir().unwrap();
    let mut half = train_diffpitch(&corpus, &setup, 30).unwrap();
    half.save(dir.path()).unwrap();
    half = TrainState::load(dir.path()).unwrap();
    continue_diffpitch(&mut half, &corpus, &setup, 60).unwrap();
    assert_eq!(half.pitch.as_ref().unwrap().history, *h);
    assert_eq!(half.pitch.as_ref().unwrap().params, state.pitch.as_ref().unwrap().params);
    println!("resumed run matches the uninterrupted one");
}

#[allow(dead_code)]
fn main() {
    run_example();
}
