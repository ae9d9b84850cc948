mod mel_analysis {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/mel_analysis.rs"));
}

#[test]
fn mel_analysis_example() {
    mel_analysis::run_example();
}

mod pitch_tracking {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/pitch_tracking.rs"));
}

#[test]
fn pitch_tracking_example() {
    pitch_tracking::run_example();
}

mod forward_diffusion {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/forward_diffusion.rs"));
}

#[test]
fn forward_diffusion_example() {
    forward_diffusion::run_example();
}

mod reverse_sampling {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/reverse_sampling.rs"));
}

#[test]
fn reverse_sampling_example() {
    reverse_sampling::run_example();
}

mod frequency_mask {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/frequency_mask.rs"));
}

#[test]
fn frequency_mask_example() {
    frequency_mask::run_example();
}

mod gradient_check {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gradient_check.rs"));
}

#[test]
fn gradient_check_example() {
    gradient_check::run_example();
}

mod synthetic_corpus {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/synthetic_corpus.rs"));
}

#[test]
fn synthetic_corpus_example() {
    synthetic_corpus::run_example();
}

mod train_pitch {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_pitch.rs"));
}

#[test]
fn train_pitch_example() {
    train_pitch::run_example();
}

mod train_voice {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_voice.rs"));
}

#[test]
fn train_voice_example() {
    train_voice::run_example();
}

mod voice_conversion {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/voice_conversion.rs"));
}

#[test]
fn voice_conversion_example() {
    voice_conversion::run_example();
}

mod masking_sweep {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/masking_sweep.rs"));
}

#[test]
fn masking_sweep_example() {
    masking_sweep::run_example();
}

mod oracle_suite {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/oracle_suite.rs"));
}

#[test]
fn oracle_suite_example() {
    oracle_suite::run_example();
}

mod cli_workflow {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/cli_workflow.rs"));
}

#[test]
fn cli_workflow_example() {
    cli_workflow::run_example();
}
