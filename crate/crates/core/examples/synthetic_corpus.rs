// Generates the synthetic speaker panel, checks that the tracker finds
// each generating F0 and round-trips the corpus through disk.

use hiervc::pipeline::{generate_corpus, Corpus};

pub fn run_example() {
    let corpus = generate_corpus(8, 1, 11).unwrap();
    for (spk, u) in corpus.speakers.iter().zip(&corpus.utterances) {
        let tracked = u.contour.voiced_median().unwrap();
        let truth = u.trajectory_mean_hz.unwrap();
        println!(
            "{}: base {:>5.1} Hz, tilt {:>5.2} dB/oct, {:.2} s, tracked median {:>5.1} Hz vs trajectory {:>5.1} Hz",
            spk.id,
            spk.f0_base_hz,
            spk.spectral_tilt_db_per_oct,
            u.audio.duration_s(),
            tracked,
            truth
        );
        assert!((tracked - truth).abs() <= 10.0);
        u.check_alignment().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path(), 13).unwrap();
    assert_eq!(back.len(), corpus.len());
    assert_eq!(back.utterances[3].audio, corpus.utterances[3].audio);
    assert_eq!(back.utterances[3].mel, corpus.utterances[3].mel);
}

#[allow(dead_code)]
fn main() {
    run_example();
}
