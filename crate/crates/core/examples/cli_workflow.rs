// The command-line workflow in one process: corpus, both training stages
// and a conversion with Griffin-Lim audio, using a tiny configuration.

use hiervc::cli::run;

const CONFIG: &str = r#"
[nets]
unet_channels = [4, 8, 8]
pitch_denoiser_channels = 8
encoder_channels = 8

[train]
batch_size = 2
log_every = 0

[sample]
n_steps = 6
"#;

pub fn run_example() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("run.toml"), CONFIG).unwrap();
    let hv = |args: &[&str]| {
        let code = run(std::iter::once("hiervc").chain(args.iter().copied()));
        println!("hiervc {} -> exit {code}", args[0]);
        code
    };
    let (cfg, corpus, ck, out) = (p("run.toml"), p("corpus"), p("ck"), p("out"));
    assert_eq!(hv(&["corpus", "--out", &corpus, "--speakers", "2", "--utterances", "2", "--config", &cfg]), 0);
    assert_eq!(hv(&["train", "pitch", "--corpus", &corpus, "--out", &ck, "--steps", "10", "--config", &cfg]), 0);
    assert_eq!(hv(&["train", "voice", "--corpus", &corpus, "--out", &ck, "--steps", "4", "--config", &cfg]), 0);
    let src = format!("{corpus}/spk00_u000.wav");
    let tgt = format!("{corpus}/spk01_u000.wav");
    assert_eq!(hv(&["convert", &src, &tgt, "--checkpoints", &ck, "--out", &out, "--config", &cfg, "--audio"]), 0);
    for f in ["converted_mel.csv", "converted_f0.csv", "f0_compare.csv", "converted.wav", "manifest.toml"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    println!("{}", std::fs::read_to_string(dir.path().join("out/f0_summary.csv")).unwrap());
}

#[allow(dead_code)]
fn main() {
    run_example();
}
