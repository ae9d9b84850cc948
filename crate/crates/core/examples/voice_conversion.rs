// End-to-end conversion with briefly trained toy models: pitch prior,
// pitch sampling, Mel prior and Mel sampling, plus the three-way pitch
// comparison written as CSV.

use hiervc::diffusion::SamplerConfig;
use hiervc::nets::ModelConfig;
use hiervc::pipeline::{continue_diffvoice, convert, f0_baseline_compare, generate_corpus, train_diffpitch, TrainSetup};

pub fn run_example() {
    let corpus = generate_corpus(2, 2, 21).unwrap();
    let mut setup = TrainSetup::default();
    setup.model = ModelConfig {
        unet_channels: vec![4, 8, 8],
        ..ModelConfig::default()
    };
    setup.train.log_every = 0;
    let mut state = train_diffpitch(&corpus, &setup, 20).unwrap();
    continue_diffvoice(&mut state, &corpus, &setup, 5).unwrap();

    let (src, tgt) = (&corpus.utterances[0], &corpus.utterances[3]);
    let cfg = SamplerConfig::new(6, 1);
    let out = convert(src, tgt, &state, &cfg).unwrap();
    println!(
        "{} -> {}: {} frames, voiced mean {:.1} Hz (source {:.1} Hz)",
        src.name,
        tgt.name,
        out.mel.n_frames(),
        out.f0.voiced_mean().unwrap(),
        src.contour.voiced_mean().unwrap()
    );
    assert_eq!(out.f0.voiced(), src.contour.voiced());
    assert_eq!(out.mel.n_frames(), src.n_frames());

    let base = corpus.speaker(&tgt.speaker_id).map(|s| s.f0_base_hz);
    let cmp = f0_baseline_compare(src, tgt, &state, &cfg, base).unwrap();
    for (name, m) in [
        ("denorm", cmp.denorm_metrics().unwrap()),
        ("encoder", cmp.encoder_metrics().unwrap()),
        ("diffpitch", cmp.diffpitch_metrics().unwrap()),
    ] {
        println!("{name:>9}: mean {:.1} Hz", m.mean_hz);
    }
    let dir = tempfile::tempdir().unwrap();
    cmp.write_trajectories(dir.path().join("f0.csv")).unwrap();
    cmp.write_summary(dir.path().join("summary.csv")).unwrap();
}

#[allow(dead_code)]
fn main() {
    run_example();
}
